from __future__ import annotations

import math

import numpy as np
import pytest

from clusterbench.graphs import chain, grid_full, grid_sparse
from clusterbench.noise import NoiseRanges, exact_lambda, synth_device
from clusterbench.oracle import (
    DenseState,
    MBQC_PATTERNS,
    bit_index,
    cluster_state,
    dense_apply_inverse,
    dense_outcome_distribution,
    depolarized_cluster_fidelity,
    feedforward_fidelity,
    setting_distribution,
    verify_mbqc_pattern,
)
from clusterbench.tableau import build_cluster_tableau, witness_setting
from clusterbench.teleport import INPUT_LABELS, TeleportConfig, build_wire_circuit, group_perturbations


class TestDenseState:
    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError):
            DenseState(1, np.array([1.0, 1.0]))

    def test_size_cap(self):
        with pytest.raises(ValueError):
            cluster_state(chain(20))

    def test_apply_on_second_qubit(self):
        state = DenseState.product([np.array([1, 0]), np.array([1, 0])])
        state.apply((1,), np.array([[0, 1], [1, 0]]))
        assert np.allclose(state.probabilities(), [0, 1, 0, 0])

    def test_bit_index(self):
        assert bit_index((1, 0, 1)) == 5


class TestClusterState:
    @pytest.mark.parametrize("graph", [chain(5), grid_sparse(2, 3), grid_full(2, 3)])
    def test_stabilizers(self, graph):
        state = cluster_state(graph)
        for row in build_cluster_tableau(graph).rows():
            assert state.expectation(row) == pytest.approx(1.0)

    def test_setting_distribution_parity(self):
        graph = chain(4)
        tab = build_cluster_tableau(graph)
        setting = witness_setting(tab, [1, 1, 0, 1])
        dist = setting_distribution(graph, setting)
        assert sum(dist.values()) == pytest.approx(1.0)
        bits = setting.support_bits
        for outcome in dist:
            par = sum(outcome[q] for q in np.flatnonzero(bits)) & 1
            assert setting.pauli.sign * (1 - 2 * par) == 1


class TestWireOracle:
    def test_distribution_normalised(self):
        program = build_wire_circuit(TeleportConfig(5, "+", group_perturbations("SB_even", 1, 0.7, 0.1)))
        assert sum(dense_outcome_distribution(program).values()) == pytest.approx(1.0)

    @pytest.mark.parametrize("label", INPUT_LABELS)
    def test_unperturbed_feedforward_is_perfect(self, label):
        assert feedforward_fidelity(TeleportConfig(6, label)) == pytest.approx(1.0)

    def test_perturbation_lowers_fidelity(self):
        config = TeleportConfig(6, "0", group_perturbations("SB_odd", 1, math.pi / 4))
        assert feedforward_fidelity(config) < 0.99


class TestMbqcPatterns:
    @pytest.mark.parametrize("pattern", sorted(MBQC_PATTERNS))
    def test_patterns(self, pattern):
        report = verify_mbqc_pattern(pattern, inputs=10, rng=0)
        assert report.passed
        assert len(report.byproducts) == report.branches

    def test_unknown(self):
        with pytest.raises(ValueError):
            verify_mbqc_pattern("toffoli")


class TestDenseInverse:
    def test_inverts_exactly(self):
        model = synth_device(3, 1, NoiseRanges(pair_rate=(0.01, 0.03)))
        lam = exact_lambda(model)
        p = np.random.default_rng(0).dirichlet(np.ones(8))
        obs = np.arange(8.0)
        assert dense_apply_inverse(model, lam @ p, obs) == pytest.approx(obs @ p)

    def test_mapping_and_setting_inputs(self):
        graph = chain(3)
        setting = witness_setting(build_cluster_tableau(graph), [1, 0, 1])
        dist = setting_distribution(graph, setting)
        assert dense_apply_inverse(np.eye(8), dist, setting) == pytest.approx(1.0)

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            dense_apply_inverse(np.full((2, 2), 0.5), [1.0, 0.0], [1.0, -1.0])


class TestDepolarized:
    def test_noiseless(self):
        assert depolarized_cluster_fidelity(chain(5), 0.0) == pytest.approx(1.0)

    def test_monotone(self):
        f = [depolarized_cluster_fidelity(chain(4), p) for p in (0.01, 0.05, 0.1)]
        assert f[0] > f[1] > f[2]

    def test_size_cap(self):
        with pytest.raises(ValueError):
            depolarized_cluster_fidelity(chain(9), 0.01)
