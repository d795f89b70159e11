"""Pathway graphs: metabolites as nodes, reactions as edges.

Edges come in four kinds. ``labeled_in`` and ``unlabeled_in`` edges enter the
pathway at a target node, ``exit`` edges leave it from a source node, and
``internal`` edges connect two metabolites.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence


class PathwayError(ValueError):
    """Raised for a pathway document that is well-formed JSON but not a valid pathway."""


class PathwaySyntaxError(PathwayError):
    """Raised when a pathway document cannot be parsed."""

    def __init__(self, msg: str, line: int = 1, column: int = 1):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.line = line
        self.column = column


class EdgeKind(enum.Enum):
    LABELED_IN = "labeled_in"
    UNLABELED_IN = "unlabeled_in"
    EXIT = "exit"
    INTERNAL = "internal"

    @property
    def has_source(self) -> bool:
        return self in (EdgeKind.EXIT, EdgeKind.INTERNAL)

    @property
    def has_target(self) -> bool:
        return self is not EdgeKind.EXIT


@dataclass(frozen=True)
class Edge:
    id: str
    kind: EdgeKind
    source: Optional[int] = None
    target: Optional[int] = None
    flux: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind.has_source != (self.source is not None):
            raise PathwayError(f"edge {self.id!r}: kind {self.kind.value} "
                               f"{'requires' if self.kind.has_source else 'forbids'} a source")
        if self.kind.has_target != (self.target is not None):
            raise PathwayError(f"edge {self.id!r}: kind {self.kind.value} "
                               f"{'requires' if self.kind.has_target else 'forbids'} a target")
        if self.flux is not None and self.flux < 0:
            raise PathwayError(f"edge {self.id!r}: flux must be nonnegative, got {self.flux}")


@dataclass(frozen=True)
class PathwayGraph:
    """Immutable pathway graph. Node indices follow the order of ``nodes``."""

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(self.nodes)})
        if len(self._index) != len(self.nodes):
            raise PathwayError("duplicate metabolite name")
        seen = set()
        n = len(self.nodes)
        for e in self.edges:
            if e.id in seen:
                raise PathwayError(f"duplicate edge id {e.id!r}")
            seen.add(e.id)
            for end in (e.source, e.target):
                if end is not None and not 0 <= end < n:
                    raise PathwayError(f"edge {e.id!r}: node index {end} out of range")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, name: str) -> int:
        return self._index[name]

    def edges_of(self, kind: EdgeKind) -> list[Edge]:
        return [e for e in self.edges if e.kind is kind]

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    @property
    def labeled_targets(self) -> frozenset[int]:
        return frozenset(e.target for e in self.edges_of(EdgeKind.LABELED_IN))

    @property
    def has_fluxes(self) -> bool:
        return all(e.flux is not None for e in self.edges)

    def without_edge(self, edge_id: str) -> "PathwayGraph":
        self.edge(edge_id)
        return PathwayGraph(self.nodes, [e for e in self.edges if e.id != edge_id])

    def with_fluxes(self, fluxes: dict) -> "PathwayGraph":
        """Return a copy with edge fluxes replaced from an ``{edge_id: value}`` mapping."""
        unknown = set(fluxes) - {e.id for e in self.edges}
        if unknown:
            raise PathwayError(f"unknown edge ids: {sorted(unknown)}")
        new_edges = []
        for e in self.edges:
            flux = _as_fraction(fluxes[e.id], e.id) if e.id in fluxes else e.flux
            new_edges.append(Edge(e.id, e.kind, e.source, e.target, flux))
        return PathwayGraph(self.nodes, new_edges)

    def reordered(self, order: Sequence[int]) -> "PathwayGraph":
        """Relabel nodes so that new node ``k`` is old node ``order[k]``."""
        inverse = {old: new for new, old in enumerate(order)}
        if sorted(order) != list(range(self.n_nodes)):
            raise ValueError("order must be a permutation of node indices")
        edges = [Edge(e.id, e.kind,
                      None if e.source is None else inverse[e.source],
                      None if e.target is None else inverse[e.target],
                      e.flux)
                 for e in self.edges]
        return PathwayGraph([self.nodes[i] for i in order], edges)


def _as_fraction(value, edge_id: str) -> Fraction:
    if isinstance(value, bool):
        raise PathwayError(f"edge {edge_id!r}: flux must be a number")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # shortest repr keeps user decimals like 0.1 exact
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError:
            raise PathwayError(f"edge {edge_id!r}: cannot read flux {value!r}") from None
    raise PathwayError(f"edge {edge_id!r}: flux must be a number, got {type(value).__name__}")


_EDGE_KEYS = {"id", "kind", "source", "target", "flux"}
_TOP_KEYS = {"metabolites", "edges"}


def parse_pathway(text: str) -> PathwayGraph:
    """Parse a JSON pathway document.

    Numbers are read as exact fractions, so ``0.1`` stays ``1/10``. Flux values
    may also be given as strings such as ``"7/20"``.
    """
    try:
        doc = json.loads(text, parse_float=Fraction, parse_int=Fraction)
    except json.JSONDecodeError as exc:
        raise PathwaySyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise PathwaySyntaxError("top level must be an object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise PathwayError(f"unknown top-level keys: {sorted(extra)}")
    for key in _TOP_KEYS:
        if key not in doc:
            raise PathwayError(f"missing top-level key {key!r}")
    metabolites = doc["metabolites"]
    if not isinstance(metabolites, list) or not all(isinstance(m, str) for m in metabolites):
        raise PathwayError("'metabolites' must be a list of strings")
    index = {}
    for i, name in enumerate(metabolites):
        if name in index:
            raise PathwayError(f"duplicate metabolite {name!r}")
        index[name] = i
    if not isinstance(doc["edges"], list):
        raise PathwayError("'edges' must be a list")

    edges = []
    seen = set()
    for pos, raw in enumerate(doc["edges"]):
        if not isinstance(raw, dict):
            raise PathwayError(f"edge #{pos} must be an object")
        extra = set(raw) - _EDGE_KEYS
        if extra:
            raise PathwayError(f"edge #{pos}: unknown keys {sorted(extra)}")
        edge_id = raw.get("id")
        if not isinstance(edge_id, str):
            raise PathwayError(f"edge #{pos}: 'id' must be a string")
        if edge_id in seen:
            raise PathwayError(f"duplicate edge id {edge_id!r}")
        seen.add(edge_id)
        try:
            kind = EdgeKind(raw.get("kind"))
        except ValueError:
            raise PathwayError(f"edge {edge_id!r}: unknown kind {raw.get('kind')!r}") from None
        ends = {}
        for end in ("source", "target"):
            ref = raw.get(end)
            if ref is None:
                ends[end] = None
            elif not isinstance(ref, str):
                raise PathwayError(f"edge {edge_id!r}: {end} must be a metabolite name")
            elif ref not in index:
                raise PathwayError(f"edge {edge_id!r}: unknown metabolite {ref!r}")
            else:
                ends[end] = index[ref]
        flux = raw.get("flux")
        flux = None if flux is None else _as_fraction(flux, edge_id)
        edges.append(Edge(edge_id, kind, ends["source"], ends["target"], flux))
    return PathwayGraph(metabolites, edges)


def _decimal_digits(value: Fraction) -> Optional[int]:
    """Number of decimal places needed to write ``value`` exactly, or None if impossible."""
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    return None if den != 1 else max(twos, fives)


def _flux_token(value: Fraction) -> str:
    digits = _decimal_digits(value)
    if digits is None:
        return json.dumps(f"{value.numerator}/{value.denominator}")
    if digits == 0:
        return str(value.numerator)
    scaled = str(abs(value.numerator) * 10 ** digits // value.denominator).rjust(digits + 1, "0")
    sign = "-" if value < 0 else ""
    return f"{sign}{scaled[:-digits]}.{scaled[-digits:]}"


def serialize_pathway(g: PathwayGraph) -> str:
    """Write ``g`` as a pathway document; ``parse_pathway`` reads it back unchanged."""
    lines = ["{", f'  "metabolites": {json.dumps(list(g.nodes))},', '  "edges": [']
    items = []
    for e in g.edges:
        fields = [f'"id": {json.dumps(e.id)}', f'"kind": "{e.kind.value}"']
        if e.source is not None:
            fields.append(f'"source": {json.dumps(g.nodes[e.source])}')
        if e.target is not None:
            fields.append(f'"target": {json.dumps(g.nodes[e.target])}')
        if e.flux is not None:
            fields.append(f'"flux": {_flux_token(e.flux)}')
        items.append("    {" + ", ".join(fields) + "}")
    lines.append(",\n".join(items))
    lines += ["  ]", "}"]
    return "\n".join(lines) + "\n"


def load_pathway(path) -> PathwayGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_pathway(fh.read())


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    items: tuple[str, ...] = ()

    def __str__(self):
        return self.message


def reachable_from_labeled(g: PathwayGraph) -> set[int]:
    adjacency = [[] for _ in range(g.n_nodes)]
    for e in g.edges_of(EdgeKind.INTERNAL):
        adjacency[e.source].append(e.target)
    seen = set(g.labeled_targets)
    queue = deque(seen)
    while queue:
        i = queue.popleft()
        for j in adjacency[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return seen


def validate_graph(g: PathwayGraph) -> list[Violation]:
    """Check every pathway invariant and list the violations (empty when valid)."""
    out: list[Violation] = []
    if g.n_nodes == 0:
        out.append(Violation("no-nodes", "pathway has no metabolites"))
    if not g.edges_of(EdgeKind.LABELED_IN):
        out.append(Violation("no-labeled-input", "no labeled input"))
    if not g.edges_of(EdgeKind.EXIT):
        out.append(Violation("no-exit", "no exit edge"))

    for kind in (EdgeKind.LABELED_IN, EdgeKind.UNLABELED_IN, EdgeKind.EXIT):
        per_node: dict[int, list[str]] = {}
        for e in g.edges_of(kind):
            node = e.target if kind.has_target else e.source
            per_node.setdefault(node, []).append(e.id)
        for node, ids in per_node.items():
            if len(ids) > 1:
                out.append(Violation(
                    "duplicate-" + kind.value,
                    f"metabolite {g.nodes[node]!r} has {len(ids)} {kind.value} edges {ids}; "
                    "combine them into one",
                    (g.nodes[node], *ids)))

    pairs: dict[tuple[int, int], list[str]] = {}
    for e in g.edges_of(EdgeKind.INTERNAL):
        if e.source == e.target:
            out.append(Violation("self-loop", f"internal edge {e.id!r} is a self-loop "
                                 f"on {g.nodes[e.source]!r}", (e.id,)))
        pairs.setdefault((e.source, e.target), []).append(e.id)
    for (i, j), ids in pairs.items():
        if len(ids) > 1:
            out.append(Violation("parallel-internal",
                                 f"{len(ids)} internal edges from {g.nodes[i]!r} to {g.nodes[j]!r}: {ids}",
                                 tuple(ids)))

    if g.edges_of(EdgeKind.LABELED_IN):
        reach = reachable_from_labeled(g)
        missing = [g.nodes[i] for i in range(g.n_nodes) if i not in reach]
        if missing:
            out.append(Violation("unreachable", f"unreachable from labeled input: {missing}",
                                 tuple(missing)))
    return out


def require_valid(g: PathwayGraph) -> PathwayGraph:
    problems = validate_graph(g)
    if problems:
        raise PathwayError("invalid pathway: " + "; ".join(map(str, problems)))
    return g


@dataclass(frozen=True)
class EdgeCensus:
    n_nodes: int
    n_edges: int
    labeled_in: int
    unlabeled_in: int
    exit: int
    internal: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.n_nodes, self.n_edges, self.labeled_in, self.unlabeled_in,
                self.exit, self.internal)


def edge_census(g: PathwayGraph) -> EdgeCensus:
    return EdgeCensus(
        g.n_nodes, g.n_edges,
        len(g.edges_of(EdgeKind.LABELED_IN)),
        len(g.edges_of(EdgeKind.UNLABELED_IN)),
        len(g.edges_of(EdgeKind.EXIT)),
        len(g.edges_of(EdgeKind.INTERNAL)),
    )


def is_arborescence(g: PathwayGraph) -> bool:
    """True when the internal edges form a tree rooted at the single labeled target."""
    labeled = g.edges_of(EdgeKind.LABELED_IN)
    internal = g.edges_of(EdgeKind.INTERNAL)
    if len(labeled) != 1 or len(internal) != g.n_nodes - 1:
        return False
    root = labeled[0].target
    indegree = [0] * g.n_nodes
    for e in internal:
        indegree[e.target] += 1
    if indegree[root] != 0 or any(d != 1 for i, d in enumerate(indegree) if i != root):
        return False
    return len(reachable_from_labeled(g)) == g.n_nodes


def arborescence_parents(g: PathwayGraph) -> dict[int, Optional[int]]:
    """Map each node to its unique internal parent (``None`` for the root)."""
    if not is_arborescence(g):
        raise PathwayError("graph is not an arborescence")
    parents: dict[int, Optional[int]] = {g.edges_of(EdgeKind.LABELED_IN)[0].target: None}
    for e in g.edges_of(EdgeKind.INTERNAL):
        parents[e.target] = e.source
    return parents


def build_graph(nodes: Iterable[str], edges: Iterable[tuple]) -> PathwayGraph:
    """Convenience constructor from ``(id, kind, source_name, target_name, flux)`` tuples."""
    nodes = list(nodes)
    index = {name: i for i, name in enumerate(nodes)}
    out = []
    for item in edges:
        edge_id, kind, source, target, *rest = item
        flux = rest[0] if rest else None
        out.append(Edge(
            edge_id, EdgeKind(kind),
            None if source is None else index[source],
            None if target is None else index[target],
            None if flux is None else _as_fraction(flux, edge_id),
        ))
    return PathwayGraph(nodes, out)
