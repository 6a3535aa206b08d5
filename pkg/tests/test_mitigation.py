from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbench.calibration import calibrate, design_random_states, simulate_calibration
from clusterbench.graphs import chain, grid_full
from clusterbench.mitigation import (
    CtmpExpansion,
    CtmpSampler,
    SingularChannelError,
    ctmp_gamma,
    ctmp_mitigated_estimate,
    ctmp_overhead,
    hoeffding_half_width,
    maximize_exit_rate,
    raw_estimate,
    raw_shot_values,
    report_row,
    select_generator_set,
    summarize,
    tp_bit_factors,
    tp_inverse_factor,
    tp_mitigated_estimate,
    tp_overhead,
    tp_shot_values,
    write_report,
)
from clusterbench.noise import (
    GeneratorTerm,
    NoiseRanges,
    ReadoutNoiseModel,
    apply_readout_noise,
    exact_lambda,
    exit_rate_form,
    exit_rates,
    generator_matrix,
    synth_device,
    tp_lambda,
)
from clusterbench.oracle import dense_apply_inverse, setting_distribution
from clusterbench.tableau import build_cluster_tableau, measure_setting, sample_witness_setting


def _all_states(n):
    return ((np.arange(2 ** n)[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.uint8)


def _brute_gamma(terms, n):
    return float(exit_rates(_all_states(n), exit_rate_form(terms, n)).max())


class TestHoeffding:
    def test_formula(self):
        assert hoeffding_half_width(1000, 0.05) == pytest.approx(2 * math.sqrt(math.log(40) / 2000))

    def test_overhead_scales_linearly(self):
        assert hoeffding_half_width(500, 0.01, Gamma=3.0) == pytest.approx(3 * hoeffding_half_width(500, 0.01))

    @pytest.mark.parametrize("n,delta", [(0, 0.1), (10, 0.0), (10, 1.0)])
    def test_invalid(self, n, delta):
        with pytest.raises(ValueError):
            hoeffding_half_width(n, delta)


class TestSummary:
    def test_fields(self):
        est = summarize([0.9, 1.0, 0.8], K=10, T=2, delta=0.01, gamma=0.1, Gamma=1.2, method="TP", n=4)
        assert est.value == pytest.approx(0.9)
        assert (est.M, est.K, est.T) == (3, 10, 2)
        assert est.std_error == pytest.approx(hoeffding_half_width(30, 0.01, 1.2))
        assert est.empirical_error == pytest.approx(np.std([0.9, 1.0, 0.8], ddof=1) / math.sqrt(3))
        lo, hi = est.interval()
        assert hi - lo == pytest.approx(2 * est.std_error)
        assert est.as_dict()["method"] == "TP"

    def test_empirical_mode(self):
        est = summarize([0.5, 0.7], K=4, delta=0.1, gamma=0, Gamma=1, method="raw", n=2, error_mode="empirical")
        assert est.half_width == est.empirical_error

    def test_rejects_empty_and_bad_mode(self):
        with pytest.raises(ValueError):
            summarize([], K=1, delta=0.1, gamma=0, Gamma=1, method="raw", n=1)
        with pytest.raises(ValueError):
            summarize([1.0], K=1, delta=0.1, gamma=0, Gamma=1, method="raw", n=1, error_mode="bogus")

    def test_report_csv(self):
        est = summarize([1.0, 1.0], K=5, delta=0.1, gamma=0, Gamma=1, method="raw", n=3)
        text = write_report([report_row(est, 1.23456)])
        header, row = text.splitlines()
        assert header == "method,n,M,K,T,value,std_error,gamma,Gamma,wall_time"
        assert row.startswith("raw,3,2,5,1,1.0,") and row.endswith(",1.235")


class TestTensorProduct:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 0.45), st.floats(0, 0.45))
    def test_inverse_factor(self, eps, eta):
        lam = np.array([[1 - eps, eta], [eps, 1 - eta]])
        assert np.allclose(tp_inverse_factor(eps, eta) @ lam, np.eye(2))

    def test_bit_factors_closed_form(self):
        eps, eta = 0.03, 0.08
        f = tp_bit_factors([[eps, eta]])
        inv = tp_inverse_factor(eps, eta)
        assert f[0, 0] == pytest.approx(inv[0, 0] - inv[1, 0])
        assert f[0, 1] == pytest.approx(inv[0, 1] - inv[1, 1])

    def test_singular(self):
        with pytest.raises(SingularChannelError):
            tp_inverse_factor(0.5, 0.5)
        with pytest.raises(SingularChannelError):
            tp_bit_factors([[0.6, 0.5]])
        with pytest.raises(SingularChannelError):
            tp_overhead([[0.6, 0.5]])

    def test_overhead(self):
        gamma, Gamma = tp_overhead([[0.02, 0.05], [0.01, 0.01]])
        assert gamma == pytest.approx(0.06)
        assert Gamma == pytest.approx((1.03 / 0.93) * (1.0 / 0.98))

    @pytest.mark.parametrize("seed", range(4))
    def test_exact_unbiasedness_against_dense_inverse(self, seed):
        n = 4
        rng = np.random.default_rng(seed)
        graph = chain(n)
        setting = sample_witness_setting(build_cluster_tableau(graph), rng)
        params = rng.uniform(0.01, 0.1, size=(n, 2))
        lam = tp_lambda(params)
        ideal = np.zeros(2 ** n)
        for bits, w in setting_distribution(graph, setting).items():
            ideal[int("".join(map(str, bits)), 2)] += w
        noisy = lam @ ideal
        values = tp_shot_values(_all_states(n), setting, tp_bit_factors(params))
        assert float(values @ noisy) == pytest.approx(dense_apply_inverse(lam, noisy, setting), abs=1e-12)
        assert float(values @ noisy) == pytest.approx(1.0, abs=1e-12)

    def test_shot_values_bounded_by_overhead(self):
        n = 5
        params = np.full((n, 2), 0.04)
        setting = sample_witness_setting(build_cluster_tableau(chain(n)), np.random.default_rng(0))
        values = tp_shot_values(_all_states(n), setting, tp_bit_factors(params))
        assert np.max(np.abs(values)) <= tp_overhead(params)[1] + 1e-12

    def test_estimates_noiseless(self):
        graph = chain(6)
        tab = build_cluster_tableau(graph)
        rng = np.random.default_rng(1)
        settings_ = [sample_witness_setting(tab, rng) for _ in range(20)]
        batches = [measure_setting(tab, s, 30, rng) for s in settings_]
        assert raw_estimate(batches, settings_).value == 1.0
        assert np.all(raw_shot_values(batches[0], settings_[0]) == 1)
        est = tp_mitigated_estimate(batches, settings_, np.zeros((6, 2)))
        assert est.value == pytest.approx(1.0)
        assert est.Gamma == 1.0


class TestExitRateMaximisation:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_exhaustive_matches_brute_force(self, seed):
        model = synth_device(6, seed, NoiseRanges(pair_rate=(0.0, 0.05)), pairs=[(0, 1), (1, 2), (0, 2), (3, 5)])
        res = maximize_exit_rate(model, method="exhaustive")
        assert res.exact
        assert res.gamma == pytest.approx(_brute_gamma(model.generator_terms, 6), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_tree_path_is_exact(self, seed):
        model = synth_device(10, seed, NoiseRanges(pair_rate=(0.0, 0.05)))
        auto = maximize_exit_rate(model, exhaustive_limit=4)
        assert auto.exact
        assert auto.gamma == pytest.approx(_brute_gamma(model.generator_terms, 10), abs=1e-12)

    def test_long_chain_is_exact(self):
        model = synth_device(95, 3, NoiseRanges(pair_rate=(0.0, 0.01)))
        res = maximize_exit_rate(model)
        assert res.exact
        form = exit_rate_form(model.generator_terms, 95)
        assert exit_rates(res.state[None, :], form)[0] == pytest.approx(res.gamma)

    @pytest.mark.parametrize("seed", range(3))
    def test_annealing_on_loopy_graph(self, seed):
        g = grid_full(3, 4)
        model = synth_device(12, seed, NoiseRanges(pair_rate=(0.0, 0.05)), pairs=list(g.edges))
        exact = maximize_exit_rate(model, method="exhaustive").gamma
        annealed = maximize_exit_rate(model, method="anneal", rng=seed)
        assert not annealed.exact
        assert annealed.gamma == pytest.approx(exact, rel=1e-9)

    def test_empty_rate_set(self):
        assert maximize_exit_rate(ReadoutNoiseModel(3)).gamma == 0.0

    def test_gamma_is_negative_min_diagonal(self):
        model = synth_device(4, 7, NoiseRanges(pair_rate=(0.01, 0.04)), pairs=[(0, 1), (1, 2), (2, 3), (0, 3)])
        g = generator_matrix(model.generator_terms, 4)
        assert ctmp_gamma(model) == pytest.approx(-np.diag(g).min())


class TestCtmpSeries:
    def test_weights(self):
        exp = CtmpExpansion(0.7)
        a = np.arange(4)
        want = [math.exp(0.7) * (-0.7) ** k / math.factorial(k) for k in a]
        assert np.allclose(exp.sign_weights(a), want)
        assert exp.Gamma == pytest.approx(math.exp(1.4))
        assert exp.cap() >= exp.truncation_order()

    def test_truncated_series_inverts_lambda(self):
        model = synth_device(3, 2, NoiseRanges(pair_rate=(0.01, 0.04)))
        gen = generator_matrix(model.generator_terms, 3)
        exp = CtmpExpansion(ctmp_gamma(model))
        q = exp.kernel(gen)
        assert np.all(q >= -1e-15) and np.allclose(q.sum(axis=0), 1)
        series = sum(w * np.linalg.matrix_power(q, k)
                     for k, w in enumerate(exp.sign_weights(np.arange(exp.truncation_order() + 1))))
        assert np.allclose(series @ exact_lambda(model), np.eye(8), atol=1e-10)

    def test_overhead_formula(self):
        assert ctmp_overhead(0.96559) == pytest.approx(6.89764, rel=1e-5)

    def test_walks_reproduce_inverse_columns(self):
        n = 2
        model = synth_device(n, 4, NoiseRanges(eps=(0.03, 0.08), eta=(0.03, 0.08), pair_rate=(0.02, 0.05)))
        inv = np.linalg.inv(exact_lambda(model))
        sampler = CtmpSampler(model)
        rng = np.random.default_rng(0)
        start = 2
        states = np.tile(_all_states(n)[start], (400_000, 1))
        ends, alpha = sampler.walk(states, rng)
        idx = ends.astype(np.int64) @ (1 << (n - 1 - np.arange(n)))
        w = sampler.Gamma * np.where(alpha % 2 == 0, 1.0, -1.0)
        col = np.bincount(idx, weights=w, minlength=4) / states.shape[0]
        assert np.allclose(col, inv[:, start], atol=0.02)

    def test_zero_gamma_with_rates_rejected(self):
        model = synth_device(2, 0)
        with pytest.raises(ValueError):
            CtmpSampler(model, gamma=0.0)

    def test_gamma_too_small_is_detected(self):
        model = synth_device(3, 0, NoiseRanges(pair_rate=(0.01, 0.03)))
        sampler = CtmpSampler(model, gamma=0.5 * ctmp_gamma(model))
        with pytest.raises(ArithmeticError):
            sampler.walk(np.zeros((2000, 3), dtype=np.uint8), np.random.default_rng(0))

    def test_noisy_estimate_recovers_fidelity(self):
        n = 5
        graph = chain(n)
        tab = build_cluster_tableau(graph)
        model = synth_device(n, 2, NoiseRanges(eps=(0.02, 0.05), eta=(0.02, 0.05), pair_rate=(0.01, 0.03)))
        rng = np.random.default_rng(3)
        settings_ = [sample_witness_setting(tab, rng) for _ in range(200)]
        batches = [apply_readout_noise(measure_setting(tab, s, 200, rng), model, rng) for s in settings_]
        raw = raw_estimate(batches, settings_).value
        est = ctmp_mitigated_estimate(batches, settings_, model, T=1, rng=rng)
        assert raw < 0.9
        assert est.value == pytest.approx(1.0, abs=0.03)
        assert est.method == "CTMP"


@pytest.fixture(scope="module")
def result():
    base = synth_device(4, 1, pairs=[])
    extra = (GeneratorTerm("00->11", (1, 2), 0.05), GeneratorTerm("11->00", (1, 2), 0.05))
    model = ReadoutNoiseModel(4, base.tp_rates, base.generator_terms + extra)
    rng = np.random.default_rng(0)
    return calibrate(simulate_calibration(model, design_random_states(4, None, rng), 3000, rng))


class TestGeneratorSets:

    def test_modes(self, result):
        assert select_generator_set("tp", result).pairs() == set()
        assert select_generator_set("most_correlated", result).pairs() == {(1, 2)}
        assert select_generator_set("full", result).pairs() == set(itertools.combinations(range(4), 2))
        nn = select_generator_set("nearest_neighbor", result, chain(4))
        assert nn.pairs() == {(0, 1), (1, 2), (2, 3)}
        assert nn.mode == "nearest_neighbor"

    def test_errors(self, result):
        with pytest.raises(ValueError):
            select_generator_set("bogus", result)
        with pytest.raises(ValueError):
            select_generator_set("nearest_neighbor", result)
