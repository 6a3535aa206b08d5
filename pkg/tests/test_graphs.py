from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterbench.graphs import (
    GraphFormatError,
    chain,
    custom,
    format_graph,
    graph_from_name,
    greedy_layers,
    grid_full,
    grid_sparse,
    parse_graph,
    read_graph,
    write_graph,
)


def _is_connected(graph):
    seen = {0}
    todo = [0]
    while todo:
        v = todo.pop()
        for w in graph.neighbors(v):
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return len(seen) == graph.n


class TestLayouts:
    def test_chain(self):
        g = chain(6)
        assert g.n == 6
        assert len(g.edges) == 5
        assert len(g.cz_patterns) == 2
        assert g.neighbors(0) == (1,)
        assert g.neighbors(3) == (2, 4)

    def test_chain_single_vertex(self):
        g = chain(1)
        assert g.edges == ()

    @pytest.mark.parametrize("build,layers", [(grid_full, 4), (grid_sparse, 3)])
    def test_grid_layer_counts(self, build, layers):
        g = build(4, 5)
        assert g.n == 20
        assert len(g.cz_patterns) == layers
        assert _is_connected(g)

    def test_sizes_used_in_benchmarks(self):
        assert grid_sparse(8, 9).n == 72
        assert grid_full(3, 19).n == 57
        assert chain(95).n == 95

    def test_truncated_grid(self):
        g = grid_full(8, 8, 57)
        assert g.n == 57
        assert all(a < 57 and b < 57 for a, b in g.edges)

    def test_truncation_too_large(self):
        with pytest.raises(ValueError):
            grid_full(2, 2, 5)

    def test_patterns_are_matchings(self):
        for g in (chain(9), grid_full(5, 6), grid_sparse(5, 6)):
            covered = set()
            for layer in g.cz_patterns:
                verts = [q for e in layer for q in e]
                assert len(verts) == len(set(verts))
                covered.update(layer)
            assert covered == set(g.edges)


class TestValidation:
    def test_self_loop(self):
        with pytest.raises(ValueError):
            custom(3, [(1, 1)])

    def test_duplicate_edge(self):
        with pytest.raises(ValueError):
            custom(3, [(0, 1), (1, 0)])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            custom(3, [(0, 3)])

    def test_neighbors_out_of_range(self):
        with pytest.raises(IndexError):
            chain(3).neighbors(7)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12).flatmap(
        lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                                .filter(lambda e: e[0] != e[1]).map(lambda e: tuple(sorted(e))),
                                                max_size=20))))
    def test_greedy_layers_partition(self, case):
        n, edges = case
        layers = greedy_layers(n, sorted(edges))
        flat = [e for layer in layers for e in layer]
        assert sorted(flat) == sorted(edges)
        for layer in layers:
            verts = [q for e in layer for q in e]
            assert len(verts) == len(set(verts))


class TestFormat:
    def test_roundtrip(self, tmp_path):
        g = grid_sparse(3, 4)
        path = tmp_path / "g.txt"
        write_graph(g, path)
        back = read_graph(path)
        assert back.n == g.n
        assert set(back.edges) == set(g.edges)
        assert [set(p) for p in back.cz_patterns] == [set(p) for p in g.cz_patterns]

    def test_parse_without_patterns(self):
        g = parse_graph("n=4\nedge 0 1\nedge 1 2\nedge 2 3\n")
        assert g.n == 4
        assert len(g.cz_patterns) >= 2

    def test_missing_header(self):
        with pytest.raises(GraphFormatError):
            parse_graph("edge 0 1\n")

    def test_bad_record(self):
        with pytest.raises(GraphFormatError):
            parse_graph("n=3\nvertex 1\n")

    def test_format_is_parseable(self):
        text = format_graph(chain(5))
        assert parse_graph(text).edges == chain(5).edges

    @pytest.mark.parametrize("name,n", [("chain:95", 95), ("grid-sparse:8x9", 72), ("grid-full:8x8/57", 57)])
    def test_names(self, name, n):
        assert graph_from_name(name).n == n

    def test_unknown_name(self):
        with pytest.raises(GraphFormatError):
            graph_from_name("no-such-thing")

    def test_grid_needs_two_dims(self):
        with pytest.raises(GraphFormatError):
            graph_from_name("grid-full:8")
