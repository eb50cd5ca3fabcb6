"""Enumeration and graph encoding of fluid cooling architectures.

An architecture is a tree of coolant paths rooted at the tank.  The
single-split family partitions the labeled cold plates into an unordered
set of ordered branches fed in parallel from the tank.  The multi-split
family has one root branch in which the flow may fork, after any final
segment of a branch, into two or more recursively structured sub-branches.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Iterator, Optional

import numpy as np

TANK = "tank"
JUNCTION = "junction"
CPHX = "cphx"

SINGLE_SPLIT = "S"
MULTI_SPLIT = "M"


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class NodeKind:
    """Vertex tag in a flat graph: tank, junction, or cold plate."""

    kind: str
    load_index: int = -1

    def __post_init__(self):
        if self.kind not in (TANK, JUNCTION, CPHX):
            raise ArchitectureError(f"unknown node kind {self.kind!r}")
        if self.kind == CPHX and self.load_index < 0:
            raise ArchitectureError("cphx node needs a load index")


@dataclass(frozen=True)
class Segment:
    """One cold plate in a branch, optionally forking downstream.

    ``split`` is an unordered collection (stored key-sorted) of at least
    two sub-branches; only the last segment of a branch may carry one.
    """

    index: int
    split: Optional[tuple["Branch", ...]] = None


@dataclass(frozen=True)
class Branch:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ArchitectureError("branch must be non-empty")
        for seg in self.segments[:-1]:
            if seg.split is not None:
                raise ArchitectureError("only the last segment may fork")

    @property
    def key(self) -> str:
        return "[" + ",".join(_segment_key(s) for s in self.segments) + "]"


@dataclass(frozen=True)
class Architecture:
    """A full cooling layout: unordered branches attached to the tank."""

    n_cphx: int
    branches: tuple[Branch, ...]

    def __post_init__(self):
        seen = sorted(_collect_indices(self.branches))
        if seen != list(range(self.n_cphx)):
            raise ArchitectureError(
                f"load indices {seen} are not a permutation of 0..{self.n_cphx - 1}"
            )

    @property
    def family(self) -> str:
        return MULTI_SPLIT if _has_split(self.branches) else SINGLE_SPLIT

    @property
    def key(self) -> str:
        return canonical_key(self)


def _segment_key(seg: Segment) -> str:
    if seg.split is None:
        return str(seg.index)
    inner = ",".join(sorted(b.key for b in seg.split))
    return f"{seg.index}>{{{inner}}}"


def _collect_indices(branches) -> list[int]:
    out = []
    for b in branches:
        for seg in b.segments:
            out.append(seg.index)
            if seg.split is not None:
                out.extend(_collect_indices(seg.split))
    return out


def _has_split(branches) -> bool:
    return any(
        seg.split is not None for b in branches for seg in b.segments
    )


def canonical_key(arch: Architecture) -> str:
    """Stable text key; equal iff equal up to reordering unordered parts."""
    inner = ",".join(sorted(b.key for b in arch.branches))
    return f"{arch.family};{arch.n_cphx};{{{inner}}}"


# ---------------------------------------------------------------------------
# enumeration

def _set_partitions(items: tuple[int, ...]) -> Iterator[list[tuple[int, ...]]]:
    """All partitions of ``items`` into unordered non-empty blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        # first joins an existing block
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1:]
        # first opens a new block
        yield [(first,)] + part


def enumerate_single_split(n: int) -> list[Architecture]:
    """All partitions of n labeled cold plates into ordered parallel branches.

    Counts follow a(n) = (2n-1) a(n-1) - (n-1)(n-2) a(n-2): 1, 3, 13, 73,
    501, 4051, ...
    """
    if not 1 <= n <= 8:
        raise ArchitectureError(f"single-split enumeration needs 1 <= n <= 8, got {n}")
    archs = []
    for blocks in _set_partitions(tuple(range(n))):
        orderings = [list(permutations(b)) for b in blocks]
        for choice in _product(orderings):
            branches = tuple(
                Branch(tuple(Segment(i) for i in order)) for order in choice
            )
            archs.append(Architecture(n, branches))
    archs.sort(key=canonical_key)
    return archs


def _product(pools):
    if not pools:
        yield []
        return
    for head in pools[0]:
        for tail in _product(pools[1:]):
            yield [head] + tail


def _branch_structures(labels: tuple[int, ...]) -> list[Branch]:
    """Every branch over exactly ``labels``: ordered chain, optional fork."""
    out = []
    n = len(labels)
    for m in range(1, n + 1):
        for chain in permutations(labels, m):
            rest = tuple(sorted(set(labels) - set(chain)))
            segs = [Segment(i) for i in chain]
            if not rest:
                out.append(Branch(tuple(segs)))
                continue
            for blocks in _set_partitions(rest):
                if len(blocks) < 2:
                    continue
                for choice in _product([_branch_structures(b) for b in blocks]):
                    subs = tuple(sorted(choice, key=lambda b: b.key))
                    forked = segs[:-1] + [Segment(chain[-1], subs)]
                    out.append(Branch(tuple(forked)))
    return out


def enumerate_multi_split(n: int) -> list[Architecture]:
    """All single-root-branch layouts with recursive unordered forks.

    Plain chains (no fork anywhere) are included by this convention; they
    come out tagged with the single-split family since nothing forks.
    """
    if not 2 <= n <= 7:
        raise ArchitectureError(f"multi-split enumeration needs 2 <= n <= 7, got {n}")
    archs = [Architecture(n, (b,)) for b in _branch_structures(tuple(range(n)))]
    archs.sort(key=canonical_key)
    return archs


# ---------------------------------------------------------------------------
# serialization (the canonical key doubles as the one-line record format)

def serialize(arch: Architecture) -> str:
    return canonical_key(arch)


def parse(record: str) -> Architecture:
    """Parse a one-line record like ``S;3;{[0,1],[2]}``."""
    try:
        family, n_text, body = record.strip().split(";", 2)
        n = int(n_text)
    except ValueError as exc:
        raise ArchitectureError(f"malformed record {record!r}") from exc
    if family not in (SINGLE_SPLIT, MULTI_SPLIT):
        raise ArchitectureError(f"unknown family {family!r}")
    branches, pos = _parse_branch_set(body, 0)
    if pos != len(body):
        raise ArchitectureError(f"trailing input in record {record!r}")
    arch = Architecture(n, branches)
    if arch.family != family:
        raise ArchitectureError(
            f"family tag {family!r} inconsistent with structure of {record!r}"
        )
    return arch


def _parse_branch_set(text: str, pos: int) -> tuple[tuple[Branch, ...], int]:
    if pos >= len(text) or text[pos] != "{":
        raise ArchitectureError(f"expected '{{' at {pos} in {text!r}")
    pos += 1
    branches = []
    while True:
        branch, pos = _parse_branch(text, pos)
        branches.append(branch)
        if pos >= len(text):
            raise ArchitectureError(f"unterminated branch set in {text!r}")
        if text[pos] == ",":
            pos += 1
            continue
        if text[pos] == "}":
            return tuple(branches), pos + 1
        raise ArchitectureError(f"unexpected {text[pos]!r} at {pos} in {text!r}")


def _parse_branch(text: str, pos: int) -> tuple[Branch, int]:
    if pos >= len(text) or text[pos] != "[":
        raise ArchitectureError(f"expected '[' at {pos} in {text!r}")
    pos += 1
    segments = []
    while True:
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if start == pos:
            raise ArchitectureError(f"expected load index at {start} in {text!r}")
        index = int(text[start:pos])
        split = None
        if pos < len(text) and text[pos] == ">":
            split, pos = _parse_branch_set(text, pos + 1)
        segments.append(Segment(index, split))
        if pos >= len(text):
            raise ArchitectureError(f"unterminated branch in {text!r}")
        if text[pos] == ",":
            pos += 1
            continue
        if text[pos] == "]":
            return Branch(tuple(segments)), pos + 1
        raise ArchitectureError(f"unexpected {text[pos]!r} at {pos} in {text!r}")


# ---------------------------------------------------------------------------
# flat graphs and node features

@dataclass(frozen=True)
class FlatGraph:
    """Vertex list plus symmetric zero-diagonal adjacency.

    ``forks_downstream`` marks cold-plate vertices whose segment feeds a
    fork; it is carried here so feature building does not re-walk the tree.
    """

    vertices: tuple[NodeKind, ...]
    adjacency: np.ndarray
    forks_downstream: tuple[bool, ...]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class Scenario:
    """One heat-load assignment (kW per cold plate)."""

    scenario_id: int
    loads: tuple[float, ...]

    def __post_init__(self):
        for d in self.loads:
            if not 4.0 <= d <= 16.0:
                raise ArchitectureError(f"load {d} kW outside [4, 16] kW")


@dataclass(frozen=True)
class FeatureGraph:
    """Flat graph plus the per-vertex 4-column feature matrix.

    Columns: [has_junction, relative_load, absolute_load_kw, is_tank].
    """

    flat: FlatGraph
    features: np.ndarray


def to_flat_graph(arch: Architecture) -> FlatGraph:
    """Flatten the branch tree: tank first, one junction per fork point.

    A tank-level split into two or more branches gets a single junction
    between the tank and the branch heads; each mid-tree fork gets its own
    junction after the forking segment.
    """
    vertices: list[NodeKind] = [NodeKind(TANK)]
    forks: list[bool] = [False]
    edges: list[tuple[int, int]] = []

    def add_vertex(kind: NodeKind, forking: bool = False) -> int:
        vertices.append(kind)
        forks.append(forking)
        return len(vertices) - 1

    def attach_branches(branches, head: int):
        ordered = sorted(branches, key=lambda b: b.key)
        if len(ordered) >= 2:
            j = add_vertex(NodeKind(JUNCTION))
            edges.append((head, j))
            head = j
        for branch in ordered:
            attach_branch(branch, head)

    def attach_branch(branch: Branch, head: int):
        for seg in branch.segments:
            v = add_vertex(NodeKind(CPHX, seg.index), forking=seg.split is not None)
            edges.append((head, v))
            head = v
            if seg.split is not None:
                attach_branches(seg.split, head)

    attach_branches(arch.branches, 0)

    n_v = len(vertices)
    adj = np.zeros((n_v, n_v), dtype=np.uint8)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1
    return FlatGraph(tuple(vertices), adj, tuple(forks))


def node_features(arch: Architecture, scenario: Scenario) -> FeatureGraph:
    if len(scenario.loads) != arch.n_cphx:
        raise ArchitectureError(
            f"scenario has {len(scenario.loads)} loads, architecture has "
            f"{arch.n_cphx} cold plates"
        )
    flat = to_flat_graph(arch)
    d_max = max(scenario.loads)
    feats = np.zeros((flat.n_vertices, 4), dtype=np.float64)
    for row, (node, forking) in enumerate(zip(flat.vertices, flat.forks_downstream)):
        if node.kind == TANK:
            feats[row, 3] = 1.0
        elif node.kind == JUNCTION:
            feats[row, 0] = 1.0
        else:
            d = scenario.loads[node.load_index]
            feats[row, 0] = 1.0 if forking else 0.0
            feats[row, 1] = d / d_max
            feats[row, 2] = d
    return FeatureGraph(flat, feats)
