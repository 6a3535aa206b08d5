from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbench.graphs import chain, custom, grid_full, grid_sparse
from clusterbench.oracle import cluster_state, depolarized_cluster_fidelity, setting_distribution
from clusterbench.pauli import PauliString
from clusterbench.tableau import (
    StabilizerTableau,
    build_cluster_tableau,
    measure_setting,
    pack_bits,
    sample_witness_setting,
    setting_sampler,
    stabilizer_of_vertex,
    unpack_bits,
    witness_setting,
)


class TestPacking:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.integers(0, 4), st.integers(0, 2 ** 32 - 1))
    def test_roundtrip(self, n, rows, seed):
        bits = np.random.default_rng(seed).integers(0, 2, size=(rows, n), dtype=np.uint8)
        assert np.array_equal(unpack_bits(pack_bits(bits), n), bits)

    def test_empty(self):
        out = unpack_bits(np.zeros((0, 2), dtype=np.uint64), 70)
        assert out.shape == (0, 70)


class TestClusterTableau:
    @pytest.mark.parametrize("graph", [chain(7), grid_full(3, 4), grid_sparse(3, 4)])
    def test_valid(self, graph):
        tab = build_cluster_tableau(graph)
        assert tab.is_valid()
        assert tab.rank() == graph.n
        assert not tab.commutation_matrix().any()

    def test_vertex_stabilizer(self):
        g = chain(4)
        assert stabilizer_of_vertex(g, 1).label() == "+ZXZI"
        assert stabilizer_of_vertex(g, 0).label() == "+XZII"

    def test_generators_fix_dense_state(self):
        g = grid_full(2, 3)
        psi = cluster_state(g)
        for i in range(g.n):
            assert psi.expectation(stabilizer_of_vertex(g, i)) == pytest.approx(1.0, abs=1e-12)

    def test_product_of_subset(self):
        g = chain(3)
        tab = build_cluster_tableau(g)
        p = tab.product((1, 1, 0))
        # (X Z I)(Z X Z) = (XZ)(ZX)(IZ) = (-iY)(iY) Z = Y Y Z
        assert p.label() == "+YYZ"

    def test_rejects_wrong_row_count(self):
        with pytest.raises(ValueError):
            StabilizerTableau.from_paulis([PauliString.from_label("XI")])

    def test_setting_subset_length(self):
        with pytest.raises(ValueError):
            witness_setting(build_cluster_tableau(chain(3)), (1, 0))


class TestSampling:
    @pytest.mark.parametrize("seed", range(5))
    def test_stabilizer_outcomes_have_even_signed_parity(self, seed):
        g = grid_sparse(4, 5)
        tab = build_cluster_tableau(g)
        rng = np.random.default_rng(seed)
        setting = sample_witness_setting(tab, rng)
        bits = measure_setting(tab, setting, 500, rng)
        par = bits[:, setting.support_bits].astype(int).sum(axis=1) % 2
        assert np.all(setting.pauli.sign * (1 - 2 * par) == 1)

    @pytest.mark.parametrize("seed", range(4))
    def test_distribution_matches_dense(self, seed):
        g = chain(5)
        tab = build_cluster_tableau(g)
        rng = np.random.default_rng(seed)
        setting = sample_witness_setting(tab, rng)
        exact = setting_sampler(tab, setting.per_qubit_basis).probabilities()
        dense = setting_distribution(g, setting)
        keys = set(exact) | set(dense)
        assert max(abs(exact.get(k, 0) - dense.get(k, 0)) for k in keys) < 1e-12

    def test_identity_setting(self):
        tab = build_cluster_tableau(chain(4))
        setting = witness_setting(tab, (0, 0, 0, 0))
        assert setting.pauli.is_identity()
        bits = measure_setting(tab, setting, 10, np.random.default_rng(0))
        assert bits.shape == (10, 4)

    def test_uniform_over_affine_space(self):
        tab = build_cluster_tableau(chain(3))
        sampler = setting_sampler(tab, "XXX")
        probs = sampler.probabilities()
        assert len(probs) == 2 ** sampler.dimension
        assert np.allclose(list(probs.values()), 2.0 ** -sampler.dimension)
        draws = sampler.sample(20000, np.random.default_rng(1))
        keys, counts = np.unique(draws, axis=0, return_counts=True)
        assert len(keys) == len(probs)
        assert np.all(np.abs(counts / 20000 - 2.0 ** -sampler.dimension) < 0.03)

    def test_mismatched_setting(self):
        tab = build_cluster_tableau(chain(4))
        other = sample_witness_setting(build_cluster_tableau(chain(5)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            measure_setting(tab, other, 5, np.random.default_rng(0))


class TestDepolarizingFrames:
    def test_matches_dense_density_matrix(self):
        g = chain(6)
        p = 0.03
        tab = build_cluster_tableau(g)
        rng = np.random.default_rng(3)
        means = []
        for _ in range(400):
            s = sample_witness_setting(tab, rng)
            bits = measure_setting(tab, s, 200, rng, depolarizing=(g, p))
            par = bits[:, s.support_bits].astype(int).sum(axis=1) % 2
            means.append(np.mean(s.pauli.sign * (1 - 2 * par)))
        assert np.mean(means) == pytest.approx(depolarized_cluster_fidelity(g, p), abs=0.02)

    def test_zero_probability_is_noiseless(self):
        g = custom(3, [(0, 1), (1, 2), (0, 2)])
        tab = build_cluster_tableau(g)
        rng = np.random.default_rng(0)
        s = sample_witness_setting(tab, rng)
        bits = measure_setting(tab, s, 100, rng, depolarizing=(g, 0.0))
        par = bits[:, s.support_bits].astype(int).sum(axis=1) % 2
        assert np.all(s.pauli.sign * (1 - 2 * par) == 1)
