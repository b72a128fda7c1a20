"""Uniform lattice graphs and the spanning-path velocity generator.

The solver works on a d-dimensional uniform box lattice.  Nodes carry the
density and the potential; edges carry velocities, which are potential
differences.  Because a potential is only determined up to a constant, only
N-1 of the edge velocities are independent.  This module builds a canonical
spanning tree whose edges serve as those N-1 generator slots: every edge
velocity (including periodic wrap edges) expands into a signed sum of
generator entries with coefficients in {-1, 0, +1}.

Conventions fixed here and relied on everywhere else:

* flat indexing is row-major (C order) over the shape ``(n+1,)*dim``, so the
  last axis varies fastest;
* the edge velocity for an ordered pair ``(i, j)`` is ``S[j] - S[i]``;
* the generator list places, for each fixed prefix of leading indices, the
  ``n`` edges along the last axis (ordered lexicographically), and then
  recursively connects the prefix anchors through the sublattice where the
  last index is zero.  In 2D this is the usual "all column edges, then the
  base row" walk.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import NotAnEdge, OutOfBounds


class Boundary(str, Enum):
    NO_FLUX = "no_flux"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeGrid:
    """Uniform lattice on the box ``[lower, upper]^dim`` with ``n`` cells per axis.

    There are ``n + 1`` nodes per axis regardless of boundary mode.  Under
    periodic boundaries the index arithmetic wraps modulo ``n + 1``; for the
    degenerate ``n == 1`` periodic axis the two wrap directions meet the same
    node, and the duplicate neighbor/edge is collapsed.
    """

    dim: int
    n: int
    lower: float
    upper: float
    boundary: Boundary = Boundary.NO_FLUX

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.upper > self.lower:
            raise ValueError("upper bound must exceed lower bound")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / self.n

    @property
    def nodes_per_axis(self) -> int:
        return self.n + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.dim

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis_coords(self) -> np.ndarray:
        return self.lower + self.spacing * np.arange(self.n + 1)

    def coordinates(self) -> np.ndarray:
        """Node coordinates as an ``(num_nodes, dim)`` array in flat order."""
        axes = np.meshgrid(*([self.axis_coords()] * self.dim), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def flat_index(self, node: tuple[int, ...]) -> int:
        self._check_node(node)
        return int(np.ravel_multi_index(node, self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(flat, self.shape))

    def _check_node(self, node) -> None:
        if len(node) != self.dim:
            raise OutOfBounds(f"node {node} has wrong dimension for dim={self.dim}")
        for k in node:
            if not 0 <= int(k) <= self.n:
                raise OutOfBounds(f"node {node} outside [0, {self.n}]^{self.dim}")

    def neighbors(self, node: tuple[int, ...]) -> list[tuple[int, ...]]:
        """Axis neighbors of ``node``; wraps modulo n+1 under periodic boundaries.

        Duplicates (the n == 1 periodic axis) are collapsed, preserving order.
        """
        self._check_node(node)
        node = tuple(int(k) for k in node)
        out: list[tuple[int, ...]] = []
        for axis in range(self.dim):
            for delta in (-1, +1):
                k = node[axis] + delta
                if self.boundary is Boundary.PERIODIC:
                    k %= self.n + 1
                elif not 0 <= k <= self.n:
                    continue
                out.append(node[:axis] + (k,) + node[axis + 1 :])
        return list(dict.fromkeys(out))

    def has_wrap_edges(self) -> bool:
        return self.boundary is Boundary.PERIODIC and self.n >= 2

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (tails, heads) for every undirected edge, each listed once."""
        return _edge_arrays(self)

    def is_edge(self, i: tuple[int, ...], j: tuple[int, ...]) -> bool:
        self._check_node(i)
        self._check_node(j)
        return tuple(j) in self.neighbors(tuple(i))


@lru_cache(maxsize=None)
def _edge_arrays(grid: LatticeGrid) -> tuple[np.ndarray, np.ndarray]:
    m = grid.n + 1
    tails, heads = [], []
    node_idx = np.arange(grid.num_nodes).reshape(grid.shape)
    for axis in range(grid.dim):
        lead = node_idx.swapaxes(axis, -1)
        tails.append(lead[..., :-1].ravel())
        heads.append(lead[..., 1:].ravel())
        if grid.has_wrap_edges():
            tails.append(lead[..., -1].ravel())
            heads.append(lead[..., 0].ravel())
    t = np.ascontiguousarray(np.concatenate(tails), dtype=np.int32)
    h = np.ascontiguousarray(np.concatenate(heads), dtype=np.int32)
    t.flags.writeable = False
    h.flags.writeable = False
    return t, h


def _generator_edge_list(n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical generator edges (tails, heads) of the d-dim recipe, flat C-order."""
    if d == 1:
        t = np.arange(n, dtype=np.int64)
        return t, t + 1
    prefixes = (n + 1) ** (d - 1)
    base = np.repeat(np.arange(prefixes, dtype=np.int64) * (n + 1), n)
    j = np.tile(np.arange(n, dtype=np.int64), prefixes)
    tails = base + j
    heads = tails + 1
    sub_t, sub_h = _generator_edge_list(n, d - 1)
    return (
        np.concatenate([tails, sub_t * (n + 1)]),
        np.concatenate([heads, sub_h * (n + 1)]),
    )


@dataclass(frozen=True)
class SpanningPath:
    """Spanning tree of the lattice with a canonical generator ordering.

    ``edges[w]`` is the ordered node pair ``(tail, head)`` of generator slot
    ``w``; the stored value ``vhat[w]`` means ``S[head] - S[tail]``.  The same
    N-1 generators are used for both boundary modes; periodic wrap edges are
    expanded through the tree, never stored.
    """

    grid: LatticeGrid

    @property
    def num_generators(self) -> int:
        return self.grid.num_nodes - 1

    @property
    def edges(self) -> np.ndarray:
        """Generator edges as an ``(N-1, 2)`` array of flat node indices."""
        t, h = _generator_edge_list(self.grid.n, self.grid.dim)
        return np.stack([t, h], axis=1)

    def reconstruct(self, vhat: np.ndarray, anchor_value: float = 0.0) -> np.ndarray:
        """Node potential with ``S[0] = anchor_value``; batched over leading axes."""
        vhat = np.asarray(vhat, dtype=float)
        if vhat.shape[-1] != self.num_generators:
            raise ValueError(
                f"expected {self.num_generators} generator entries, got {vhat.shape[-1]}"
            )
        s = _reconstruct_rec(vhat, self.grid.n, self.grid.dim)
        s = s.reshape(vhat.shape[:-1] + (self.grid.num_nodes,))
        if anchor_value != 0.0:
            s = s + anchor_value
        return s

    def restrict(self, potential: np.ndarray) -> np.ndarray:
        """Generator entries ``S[head] - S[tail]``; inverse of :meth:`reconstruct`."""
        potential = np.asarray(potential, dtype=float)
        if potential.shape[-1] != self.grid.num_nodes:
            raise ValueError(
                f"expected {self.grid.num_nodes} node values, got {potential.shape[-1]}"
            )
        sg = potential.reshape(potential.shape[:-1] + self.grid.shape)
        return _restrict_rec(sg, self.grid.n, self.grid.dim)

    def node_coefficients(self) -> np.ndarray:
        """``(N, N-1)`` int8 matrix P with ``S[i] = S[anchor] + P[i] @ vhat``."""
        return _node_coefficients(self.grid)

    def expansion(self, edge: tuple[int, int]) -> np.ndarray:
        """Signed generator coefficients of an edge velocity, in {-1, 0, +1}."""
        i, j = self._check_edge(edge)
        coeff = self.node_coefficients()
        return coeff[j].astype(np.int64) - coeff[i].astype(np.int64)

    def expand_velocity(self, vhat: np.ndarray, edge: tuple[int, int]) -> float:
        i, j = self._check_edge(edge)
        s = self.reconstruct(np.asarray(vhat, dtype=float))
        return float(s[j] - s[i])

    def _check_edge(self, edge) -> tuple[int, int]:
        i, j = edge
        gi = self.grid.multi_index(int(i)) if np.isscalar(i) or isinstance(i, (int, np.integer)) else tuple(i)
        gj = self.grid.multi_index(int(j)) if np.isscalar(j) or isinstance(j, (int, np.integer)) else tuple(j)
        if not self.grid.is_edge(gi, gj):
            raise NotAnEdge(f"{gi} -- {gj} is not an edge of the lattice")
        return self.grid.flat_index(gi), self.grid.flat_index(gj)


def _reconstruct_rec(v: np.ndarray, n: int, d: int) -> np.ndarray:
    lead = v.shape[:-1]
    if d == 1:
        s = np.zeros(lead + (n + 1,), dtype=float)
        np.cumsum(v, axis=-1, out=s[..., 1:])
        return s
    m = (n + 1) ** (d - 1) * n
    c = v[..., :m].reshape(lead + ((n + 1),) * (d - 1) + (n,))
    s0 = _reconstruct_rec(v[..., m:], n, d - 1)
    s = np.empty(lead + ((n + 1),) * d, dtype=float)
    s[..., 0] = s0
    s[..., 1:] = s0[..., None] + np.cumsum(c, axis=-1)
    return s


def _restrict_rec(sg: np.ndarray, n: int, d: int) -> np.ndarray:
    lead = sg.shape[: -d]
    c = np.diff(sg, axis=-1)
    if d == 1:
        return c
    first = c.reshape(lead + ((n + 1) ** (d - 1) * n,))
    rest = _restrict_rec(sg[..., 0], n, d - 1)
    return np.concatenate([first, rest], axis=-1)


@lru_cache(maxsize=None)
def _node_coefficients(grid: LatticeGrid) -> np.ndarray:
    path = SpanningPath(grid)
    basis = np.eye(path.num_generators)
    coeff = np.rint(path.reconstruct(basis)).T.astype(np.int8)
    coeff.flags.writeable = False
    return coeff


def neighbors(grid: LatticeGrid, node: tuple[int, ...]) -> list[tuple[int, ...]]:
    return grid.neighbors(node)


def build_spanning_path(grid: LatticeGrid) -> SpanningPath:
    return SpanningPath(grid)


def reconstruct_potential(
    path: SpanningPath, vhat: np.ndarray, anchor_value: float = 0.0
) -> np.ndarray:
    return path.reconstruct(vhat, anchor_value)


def expand_velocity(path: SpanningPath, vhat: np.ndarray, edge: tuple[int, int]) -> float:
    return path.expand_velocity(vhat, edge)
