from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbench.noise import (
    GeneratorTerm,
    ModelFormatError,
    NoiseRanges,
    ReadoutNoiseModel,
    apply_ctmp_noise,
    apply_readout_noise,
    apply_tp_noise,
    channel_matrix,
    exact_lambda,
    exit_rate_form,
    exit_rates,
    flip_rates_from_tp,
    format_model,
    generator_matrix,
    parse_model,
    read_model,
    synth_device,
    tp_from_flip_rates,
    tp_lambda,
    write_model,
)


def _all_states(n):
    return ((np.arange(2 ** n)[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.uint8)


def _index(bits):
    n = bits.shape[1]
    return bits.astype(np.int64) @ (1 << (n - 1 - np.arange(n)))


class TestGeneratorTerm:
    def test_kinds(self):
        t = GeneratorTerm("00->11", (1, 3), 0.1)
        assert t.source == (0, 0)
        assert t.target == (1, 1)

    @pytest.mark.parametrize("kind,qubits,rate", [
        ("bogus", (0,), 0.1),
        ("0->1", (0, 1), 0.1),
        ("01->10", (2, 1), 0.1),
        ("0->1", (0,), -0.1),
        ("0->1", (0,), float("nan")),
    ])
    def test_invalid(self, kind, qubits, rate):
        with pytest.raises(ValueError):
            GeneratorTerm(kind, qubits, rate)

    def test_model_validates_qubits(self):
        with pytest.raises(ValueError):
            ReadoutNoiseModel(2, generator_terms=(GeneratorTerm("0->1", (2,), 0.1),))

    def test_model_validates_rates(self):
        with pytest.raises(ValueError):
            ReadoutNoiseModel(2, np.array([[0.1, 1.2], [0.0, 0.0]]))


class TestRateConversion:
    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 0.45), st.floats(0, 0.45))
    def test_roundtrip(self, eps, eta):
        r01, r10 = flip_rates_from_tp(eps, eta)
        back = tp_from_flip_rates(r01, r10)
        assert back == pytest.approx((eps, eta), abs=1e-12)

    def test_single_qubit_exponential(self):
        r01, r10 = flip_rates_from_tp(0.03, 0.07)
        g = np.array([[-r01, r10], [r01, -r10]])
        lam = scipy.linalg.expm(g)
        assert lam[1, 0] == pytest.approx(0.03)
        assert lam[0, 1] == pytest.approx(0.07)

    def test_rejects_non_invertible(self):
        with pytest.raises(ValueError):
            flip_rates_from_tp(0.6, 0.5)


class TestMatrices:
    def test_generator_columns_sum_to_zero(self):
        model = synth_device(4, 1, NoiseRanges(pair_rate=(0.01, 0.03)))
        g = generator_matrix(model.generator_terms, 4)
        assert np.allclose(g.sum(axis=0), 0)
        off = g - np.diag(np.diag(g))
        assert np.all(off >= 0)

    def test_lambda_is_stochastic(self):
        model = synth_device(4, 2, NoiseRanges(pair_rate=(0.01, 0.03)))
        lam = exact_lambda(model)
        assert np.allclose(lam.sum(axis=0), 1)
        assert np.all(lam >= -1e-15)

    def test_single_terms_reproduce_tp(self):
        model = synth_device(3, 5, pairs=[])
        assert np.allclose(exact_lambda(model), tp_lambda(model.tp_rates), atol=1e-12)

    def test_tp_lambda_bit_order(self):
        rates = np.array([[0.1, 0.0], [0.0, 0.0]])
        lam = tp_lambda(rates)
        # qubit 0 is the most significant bit: |00> -> |10> is index 0 -> 2
        assert lam[2, 0] == pytest.approx(0.1)
        assert lam[1, 0] == 0

    def test_channel_matrix_follows_model_kind(self):
        tp_only = ReadoutNoiseModel(2, np.array([[0.02, 0.03], [0.01, 0.05]]))
        assert np.allclose(channel_matrix(tp_only), tp_lambda(tp_only.tp_rates))
        corr = synth_device(2, 0, NoiseRanges(pair_rate=(0.01, 0.02)))
        assert np.allclose(channel_matrix(corr), exact_lambda(corr))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_exit_rates_match_generator_diagonal(self, seed):
        model = synth_device(4, seed, NoiseRanges(pair_rate=(0.0, 0.05)), pairs=[(0, 1), (1, 3), (0, 2)])
        form = exit_rate_form(model.generator_terms, 4)
        g = generator_matrix(model.generator_terms, 4)
        assert np.allclose(exit_rates(_all_states(4), form), -np.diag(g))


class TestSampling:
    def test_tp_flip_frequencies(self):
        model = ReadoutNoiseModel(2, np.array([[0.1, 0.2], [0.0, 0.3]]))
        rng = np.random.default_rng(0)
        zeros = apply_tp_noise(np.zeros((100_000, 2)), model, rng)
        ones = apply_tp_noise(np.ones((100_000, 2)), model, rng)
        assert zeros.mean(axis=0) == pytest.approx([0.1, 0.0], abs=0.005)
        assert 1 - ones.mean(axis=0) == pytest.approx([0.2, 0.3], abs=0.005)

    def test_tp_length_check(self):
        with pytest.raises(ValueError):
            apply_tp_noise(np.zeros((3, 4)), ReadoutNoiseModel(2), 0)

    def test_input_not_mutated(self):
        bits = np.zeros((10, 3), dtype=np.uint8)
        model = synth_device(3, 1, NoiseRanges(eps=(0.5, 0.5), eta=(0.4, 0.4)))
        apply_readout_noise(bits, model, 0)
        assert not bits.any()

    def test_noiseless_model_passthrough(self):
        bits = np.random.default_rng(0).integers(0, 2, (20, 4), dtype=np.uint8)
        assert np.array_equal(apply_readout_noise(bits, None, 0), bits)
        assert np.array_equal(apply_readout_noise(bits, ReadoutNoiseModel(4), 0), bits)

    @pytest.mark.parametrize("start", [0, 3, 6])
    def test_ctmp_channel_columns(self, start):
        n = 3
        model = synth_device(n, 4, NoiseRanges(eps=(0.03, 0.08), eta=(0.03, 0.08), pair_rate=(0.02, 0.06)),
                             pairs=[(0, 1), (1, 2), (0, 2)])
        lam = exact_lambda(model)
        bits = np.tile(_all_states(n)[start], (200_000, 1))
        out = apply_ctmp_noise(bits, model, np.random.default_rng(start))
        freq = np.bincount(_index(out), minlength=2 ** n) / out.shape[0]
        assert 0.5 * np.abs(freq - lam[:, start]).sum() < 0.005


class TestModelFiles:
    def test_roundtrip(self, tmp_path):
        model = synth_device(5, 9, depolarizing_p=0.01)
        path = tmp_path / "m.txt"
        write_model(model, path)
        assert read_model(path) == model

    def test_text_roundtrip_exact(self):
        model = synth_device(3, 2)
        assert format_model(parse_model(format_model(model))) == format_model(model)

    @pytest.mark.parametrize("text", [
        "",
        "n 2\ntp 5 0.1 0.1\n",
        "n 2\nfoo 1\n",
        "n 2\ntp 0 0.1\n",
        "n 2\ngen 0->1 5 0.1\n",
        "n 2\ngen 00->11 1 0 0.1\n",
    ])
    def test_bad_files(self, text):
        with pytest.raises(ModelFormatError):
            parse_model(text)

    def test_n_inferred_without_header(self):
        assert parse_model("tp 2 0.1 0.1\n").n == 3

    def test_synth_is_deterministic(self):
        assert synth_device(6, 3) == synth_device(6, 3)
        assert synth_device(6, 3) != synth_device(6, 4)
