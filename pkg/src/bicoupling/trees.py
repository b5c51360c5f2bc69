"""Oriented trees, edge signatures and scalar homomorphism densities."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "OrientedTree",
    "EdgeSignature",
    "enumerate_trees",
    "signatures",
    "homomorphism_density",
    "MAX_TREE_VERTICES",
]

MAX_TREE_VERTICES = 6
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class OrientedTree:
    """Tree on vertices ``0..v-1``; edge ``(i, j)`` points from i to j.

    An edge ``(i, j)`` carries the weight ``w[l_i, l_j]`` when its signature bit
    is set; targets of edges are the head vertices carrying agent states.
    """

    v: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.v < 1:
            raise ValueError("a tree needs at least one vertex")
        if len(edges) != self.v - 1:
            raise ValueError(f"a tree on {self.v} vertices has {self.v - 1} edges, got {len(edges)}")
        seen = set()
        parent = list(range(self.v))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in edges:
            if not (0 <= i < self.v and 0 <= j < self.v) or i == j:
                raise ValueError(f"bad edge ({i}, {j})")
            if (j, i) in seen or (i, j) in seen:
                raise ValueError(f"edge ({i}, {j}) repeated or reversed")
            seen.add((i, j))
            ri, rj = find(i), find(j)
            if ri == rj:
                raise ValueError("edges contain an undirected cycle")
            parent[ri] = rj

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def heads(self) -> tuple[int, ...]:
        """Sorted vertices that are the target of at least one edge."""
        return tuple(sorted({j for _, j in self.edges}))

    def code(self) -> str:
        return canonical_code(self.v, self.edges)

    def __str__(self) -> str:
        return f"T{self.v}[" + ",".join(f"{i}>{j}" for i, j in self.edges) + "]"

    def to_dict(self) -> dict:
        return {"v": self.v, "edges": [list(e) for e in self.edges]}

    def einsum_terms(self, signature: "EdgeSignature", letters: str = _LETTERS):
        """Index strings of the weight factors selected by ``signature``."""
        return [letters[i] + letters[j] for (i, j), on in zip(self.edges, signature.s) if on]


@dataclass(frozen=True)
class EdgeSignature:
    s: tuple[int, ...]

    def __post_init__(self):
        s = tuple(int(b) for b in self.s)
        if any(b not in (0, 1) for b in s):
            raise ValueError("signature entries must be 0 or 1")
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return len(self.s)

    def __str__(self) -> str:
        return "".join(map(str, self.s))


def canonical_code(v: int, edges) -> str:
    """Lexicographically smallest sorted edge list over all vertex relabelings."""
    best = None
    for perm in itertools.permutations(range(v)):
        cand = tuple(sorted((perm[i], perm[j]) for i, j in edges))
        if best is None or cand < best:
            best = cand
    return f"{v}:" + ",".join(f"{i}>{j}" for i, j in best)


@lru_cache(maxsize=None)
def _trees_with(v: int) -> tuple[OrientedTree, ...]:
    if v == 1:
        return (OrientedTree(1, ()),)
    found: dict[str, OrientedTree] = {}
    for base in _trees_with(v - 1):
        for anchor in range(v - 1):
            for edge in ((anchor, v - 1), (v - 1, anchor)):
                t = OrientedTree(v, base.edges + (edge,))
                found.setdefault(t.code(), t)
    return tuple(found[k] for k in sorted(found))


def enumerate_trees(max_vertices: int) -> list[OrientedTree]:
    """All oriented trees with 2..max_vertices vertices, one per isomorphism class.

    Trees on v vertices arise from trees on v - 1 vertices by attaching a leaf
    in either orientation; duplicates are removed by canonical code.
    """
    if not 2 <= max_vertices <= MAX_TREE_VERTICES:
        raise ValueError(f"max_vertices must be in [2, {MAX_TREE_VERTICES}], got {max_vertices}")
    out: list[OrientedTree] = []
    for v in range(2, max_vertices + 1):
        out.extend(_trees_with(v))
    return out


def signatures(tree: OrientedTree):
    for bits in itertools.product((0, 1), repeat=tree.n_edges):
        yield EdgeSignature(bits)


def homomorphism_density(tree: OrientedTree, w, signature: EdgeSignature | None = None) -> float:
    """``t(F, w) = n^{-v} sum_l prod_{(i,j)} w[l_i, l_j]`` for a step kernel w.

    With a signature only the selected edges contribute a weight factor.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if signature is None:
        signature = EdgeSignature((1,) * tree.n_edges)
    terms = tree.einsum_terms(signature)
    ops = [w] * len(terms)
    # a ones vector per vertex keeps every index summed even without weight factors
    terms += list(_LETTERS[: tree.v])
    ops += [np.ones(n)] * tree.v
    return float(np.einsum(",".join(terms) + "->", *ops, optimize="greedy")) / n**tree.v
