"""Graph specifications for cluster states and their parallel CZ layers.

Built-in layouts:

* ``chain(n)``: path graph, two CZ layers (even / odd bonds).
* ``grid_full(rows, cols)``: square lattice, four layers (two horizontal,
  two vertical).
* ``grid_sparse(rows, cols)``: the square lattice with its fourth layer
  removed, which leaves a connected brick-wall lattice of three layers.

Both grids accept ``n`` to keep only the first ``n`` sites in row-major order,
so e.g. ``grid_sparse(8, 9)`` has 72 qubits and ``grid_full(3, 19)`` has 57.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "GraphSpec",
    "GraphFormatError",
    "chain",
    "grid_full",
    "grid_sparse",
    "custom",
    "parse_graph",
    "format_graph",
    "read_graph",
    "write_graph",
    "graph_from_name",
]

LAYOUTS = ("chain", "grid-sparse", "grid-full", "custom")

Edge = tuple[int, int]


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    n: int
    edges: tuple[Edge, ...]
    layout_tag: str = "custom"
    cz_patterns: tuple[tuple[Edge, ...], ...] = ()
    _nbrs: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one vertex")
        if self.layout_tag not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout_tag!r}")
        seen: set[Edge] = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on vertex {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"edge ({a}, {b}) out of range")
            e = (min(a, b), max(a, b))
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
        covered: list[Edge] = []
        for layer in self.cz_patterns:
            used: set[int] = set()
            for a, b in layer:
                if a in used or b in used:
                    raise ValueError("a CZ pattern touches the same vertex twice")
                used.update((a, b))
                covered.append((min(a, b), max(a, b)))
        if sorted(covered) != sorted(seen):
            raise ValueError("cz_patterns must partition the edge set")
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        object.__setattr__(self, "_nbrs", tuple(tuple(sorted(v)) for v in nbrs))

    def neighbors(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.n:
            raise IndexError(f"vertex {i} out of range for n={self.n}")
        return self._nbrs[i]

    def has_edge(self, a: int, b: int) -> bool:
        return b in self._nbrs[a]

    def edge_index(self) -> dict[Edge, int]:
        return {(min(a, b), max(a, b)): i for i, (a, b) in enumerate(self.edges)}


def _norm(edges) -> list[Edge]:
    return [(min(a, b), max(a, b)) for a, b in edges]


def greedy_layers(n: int, edges: list[Edge]) -> list[list[Edge]]:
    """Partition edges into matchings by first-fit colouring."""
    layers: list[list[Edge]] = []
    busy: list[set[int]] = []
    for a, b in edges:
        for layer, used in zip(layers, busy):
            if a not in used and b not in used:
                layer.append((a, b))
                used.update((a, b))
                break
        else:
            layers.append([(a, b)])
            busy.append({a, b})
    return layers


def chain(n: int) -> GraphSpec:
    edges = [(i, i + 1) for i in range(n - 1)]
    layers = [e for e in (edges[0::2], edges[1::2]) if e]
    return GraphSpec(n, tuple(edges), "chain", tuple(tuple(p) for p in layers))


def _grid_layers(rows: int, cols: int, n: int | None) -> tuple[int, list[list[Edge]]]:
    total = rows * cols
    if n is None:
        n = total
    if not 1 <= n <= total:
        raise ValueError(f"n={n} does not fit a {rows}x{cols} grid")

    def site(r: int, c: int) -> int:
        return r * cols + c

    h_even, h_odd, v_even, v_odd = [], [], [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                (h_even if c % 2 == 0 else h_odd).append((site(r, c), site(r, c + 1)))
            if r + 1 < rows:
                (v_even if (r + c) % 2 == 0 else v_odd).append((site(r, c), site(r + 1, c)))
    layers = [[e for e in layer if e[1] < n] for layer in (h_even, h_odd, v_even, v_odd)]
    return n, layers


def grid_full(rows: int, cols: int, n: int | None = None) -> GraphSpec:
    n, layers = _grid_layers(rows, cols, n)
    layers = [p for p in layers if p]
    edges = [e for p in layers for e in p]
    return GraphSpec(n, tuple(edges), "grid-full", tuple(tuple(p) for p in layers))


def grid_sparse(rows: int, cols: int, n: int | None = None) -> GraphSpec:
    n, layers = _grid_layers(rows, cols, n)
    layers = [p for p in layers[:3] if p]
    edges = [e for p in layers for e in p]
    return GraphSpec(n, tuple(edges), "grid-sparse", tuple(tuple(p) for p in layers))


def custom(n: int, edges, patterns=None) -> GraphSpec:
    edges = _norm(edges)
    if patterns is None:
        patterns = greedy_layers(n, edges)
    else:
        patterns = [_norm(p) for p in patterns]
    return GraphSpec(n, tuple(edges), "custom", tuple(tuple(p) for p in patterns))


_PATTERN_RE = re.compile(r"^pattern\s+(\d+)\s*:\s*(.*)$")


def parse_graph(text: str) -> GraphSpec:
    """Parse the line format ``n=<int>`` / ``edge i j`` / ``pattern k: idx idx ...``.

    ``#`` starts a comment.  An optional ``layout <tag>`` line is accepted.
    Without pattern lines the edges are coloured greedily.
    """
    n = None
    layout = "custom"
    edges: list[Edge] = []
    patterns: dict[int, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("n="):
                n = int(line[2:])
            elif line.startswith("layout"):
                layout = line.split()[1]
            elif line.startswith("edge"):
                _, a, b = line.split()
                edges.append((int(a), int(b)))
            elif m := _PATTERN_RE.match(line):
                patterns[int(m.group(1))] = [int(t) for t in m.group(2).replace(",", " ").split()]
            else:
                raise GraphFormatError(f"line {lineno}: unrecognised record {raw!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"line {lineno}: {exc}") from exc
    if n is None:
        raise GraphFormatError("missing 'n=<int>' header")
    edges = _norm(edges)
    if patterns:
        try:
            layers = [[edges[i] for i in patterns[k]] for k in sorted(patterns)]
        except IndexError as exc:
            raise GraphFormatError("pattern references a missing edge index") from exc
    else:
        layers = greedy_layers(n, edges)
    try:
        return GraphSpec(n, tuple(edges), layout, tuple(tuple(p) for p in layers))
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from exc


def format_graph(graph: GraphSpec) -> str:
    lines = [f"n={graph.n}", f"layout {graph.layout_tag}"]
    lines += [f"edge {a} {b}" for a, b in graph.edges]
    index = graph.edge_index()
    for k, layer in enumerate(graph.cz_patterns):
        lines.append(f"pattern {k}: " + " ".join(str(index[e]) for e in layer))
    return "\n".join(lines) + "\n"


def read_graph(path) -> GraphSpec:
    return parse_graph(Path(path).read_text())


def write_graph(graph: GraphSpec, path) -> None:
    Path(path).write_text(format_graph(graph))


_NAME_RE = re.compile(r"^(chain|grid-sparse|grid-full)[:=]?(\d+)(?:x(\d+))?(?:/(\d+))?$")


def graph_from_name(name: str) -> GraphSpec:
    """Shorthands: ``chain:95``, ``grid-sparse:8x9``, ``grid-full:8x8/57``.

    Anything else is treated as a path to a graph file.
    """
    m = _NAME_RE.match(name.strip())
    if m is None:
        path = Path(name)
        if not path.exists():
            raise GraphFormatError(f"no graph file or layout named {name!r}")
        return read_graph(path)
    kind, a, b, cut = m.groups()
    if kind == "chain":
        if b is not None:
            raise GraphFormatError("chain takes a single length")
        return chain(int(a))
    if b is None:
        raise GraphFormatError(f"{kind} needs ROWSxCOLS")
    build = grid_full if kind == "grid-full" else grid_sparse
    return build(int(a), int(b), int(cut) if cut else None)
