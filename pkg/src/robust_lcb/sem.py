"""Causal graphs and linear structural equation models with soft interventions.

Nodes are indexed ``0..N-1`` in topological order, so every edge points from a
lower to a higher index and all weight matrices are strictly upper triangular.
The reward node is always the last index. An intervention (action) is a Python
``int`` used as a bitset: bit ``i`` set means node ``i`` is intervened.
"""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

Action = int


def action_from_nodes(nodes: Iterable[int]) -> Action:
    a = 0
    for i in nodes:
        a |= 1 << int(i)
    return a


def nodes_of(a: Action, n: int) -> list[int]:
    return [i for i in range(n) if (a >> i) & 1]


def action_mask(a: Action, n: int) -> np.ndarray:
    """Boolean vector of length ``n`` marking intervened nodes."""
    return np.array([(a >> i) & 1 for i in range(n)], dtype=bool)


def action_masks(actions: Sequence[Action], n: int) -> np.ndarray:
    acts = np.asarray(actions, dtype=np.int64)
    return ((acts[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)


@dataclass(frozen=True)
class CausalGraph:
    """A DAG whose node indices already form a topological order."""

    node_count: int
    edges: frozenset[tuple[int, int]]
    names: tuple[str, ...] = ()
    parents: tuple[tuple[int, ...], ...] = field(init=False)
    children: tuple[tuple[int, ...], ...] = field(init=False)
    causal_depth: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        n = self.node_count
        if n < 1:
            raise ValueError("graph needs at least one node")
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {(i, j)} out of range for {n} nodes")
            if i >= j:
                raise ValueError(f"edge {(i, j)} does not respect topological indexing")
        pa = [tuple(sorted(i for i, j in self.edges if j == k)) for k in range(n)]
        ch = [tuple(sorted(j for i, j in self.edges if i == k)) for k in range(n)]
        depth = [0] * n
        for k in range(n):
            if pa[k]:
                depth[k] = 1 + max(depth[p] for p in pa[k])
        if not self.names:
            object.__setattr__(self, "names", tuple(f"X{k + 1}" for k in range(n)))
        elif len(self.names) != n:
            raise ValueError("names must have one entry per node")
        object.__setattr__(self, "parents", tuple(pa))
        object.__setattr__(self, "children", tuple(ch))
        object.__setattr__(self, "causal_depth", tuple(depth))

    @classmethod
    def from_named_edges(cls, nodes: Sequence[str], edges: Iterable[tuple[str, str]],
                         reward: str | None = None) -> "CausalGraph":
        """Build a graph from arbitrary node labels, assigning topological indices.

        The reward node (default: the last node of the sorted order) is forced
        to the final index and must have no outgoing edges.
        """
        edges = [(str(u), str(v)) for u, v in edges]
        known = set(nodes)
        for u, v in edges:
            if u not in known or v not in known:
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
        ts = graphlib.TopologicalSorter({v: [] for v in nodes})
        for u, v in edges:
            ts.add(v, u)
        try:
            ts.prepare()
        except graphlib.CycleError as exc:
            raise ValueError(f"graph has a cycle: {exc.args[1]}") from None
        # stable tie-breaking by the order nodes were declared
        rank = {name: k for k, name in enumerate(nodes)}
        order = _stable_topo(nodes, edges, rank)
        if reward is not None:
            if any(u == reward for u, _ in edges):
                raise ValueError(f"reward node {reward!r} has outgoing edges")
            order.remove(reward)
            order.append(reward)
        index = {name: k for k, name in enumerate(order)}
        return cls(len(order), frozenset((index[u], index[v]) for u, v in edges), tuple(order))

    @property
    def reward_node(self) -> int:
        return self.node_count - 1

    @property
    def max_in_degree(self) -> int:
        return max(len(p) for p in self.parents)

    @property
    def max_out_degree(self) -> int:
        return max(len(c) for c in self.children)

    @property
    def longest_path(self) -> int:
        return max(self.causal_depth)

    @property
    def non_root_nodes(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.node_count) if self.parents[k])

    def edge_mask(self) -> np.ndarray:
        mask = np.zeros((self.node_count, self.node_count), dtype=bool)
        for i, j in self.edges:
            mask[i, j] = True
        return mask


def _stable_topo(nodes, edges, rank) -> list[str]:
    indeg = {v: 0 for v in nodes}
    succ: dict[str, list[str]] = {v: [] for v in nodes}
    for u, v in edges:
        indeg[v] += 1
        succ[u].append(v)
    ready = sorted((v for v in nodes if indeg[v] == 0), key=rank.__getitem__)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort(key=rank.__getitem__)
    return order


@dataclass(frozen=True)
class WeightMatrices:
    B: np.ndarray
    B_star: np.ndarray

    def validate(self, graph: CausalGraph, tol: float = 1e-12) -> None:
        mask = graph.edge_mask()
        for name, M in (("B", self.B), ("B_star", self.B_star)):
            if M.shape != mask.shape:
                raise ValueError(f"{name} has shape {M.shape}, expected {mask.shape}")
            if np.any(M[~mask] != 0):
                raise ValueError(f"{name} has weights outside the edge set")
            norms = np.linalg.norm(M, axis=0)
            if np.any(norms > 1 + tol):
                raise ValueError(f"{name} has a column with norm {norms.max():.6g} > 1")


def weights_from_rule(graph: CausalGraph, obs_scale: float, int_scale: float) -> WeightMatrices:
    """Weights ``c / sqrt(|pa(i)|)`` on every incoming edge of node ``i``."""
    B = np.zeros((graph.node_count, graph.node_count))
    Bs = np.zeros_like(B)
    for j, pa in enumerate(graph.parents):
        if pa:
            B[list(pa), j] = obs_scale / np.sqrt(len(pa))
            Bs[list(pa), j] = int_scale / np.sqrt(len(pa))
    return WeightMatrices(B, Bs)


class NoiseModel(Protocol):
    mean: np.ndarray
    norm_bound: float

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...] | None = None) -> np.ndarray:
        ...


@dataclass(frozen=True)
class UniformNoise:
    """Independent per-node uniform noise on ``[low_i, high_i]``."""

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def constant(cls, n: int, low: float = 0.0, high: float = 2.0) -> "UniformNoise":
        return cls(np.full(n, float(low)), np.full(n, float(high)))

    @property
    def mean(self) -> np.ndarray:
        return (self.low + self.high) / 2

    @property
    def norm_bound(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.low), np.abs(self.high))))

    def sample(self, rng, size=None):
        shape = (len(self.low),) if size is None else (*np.atleast_1d(size), len(self.low))
        return self.low + (self.high - self.low) * rng.random(shape)


@dataclass(frozen=True)
class SemInstance:
    graph: CausalGraph
    weights: WeightMatrices
    noise: NoiseModel
    value_bound: float = field(init=False)

    def __post_init__(self):
        self.weights.validate(self.graph)
        if len(self.noise.mean) != self.graph.node_count:
            raise ValueError("noise dimension does not match the graph")
        object.__setattr__(self, "value_bound", value_bound(self.graph, self.noise.norm_bound))

    @property
    def n(self) -> int:
        return self.graph.node_count

    @property
    def nu(self) -> np.ndarray:
        return np.asarray(self.noise.mean, dtype=float)


def value_bound(graph: CausalGraph, m_eps: float) -> float:
    """Static bound on ``||X||`` valid for any weight matrix with unit-norm columns.

    ``||M^T||_2 <= sqrt(max out-degree)`` when columns have norm <= 1, so the
    in-degree form ``sum_l d^(l/2)`` is used with ``d`` raised to the out-degree
    whenever that is larger.
    """
    k = max(graph.max_in_degree, graph.max_out_degree, 1)
    return float(m_eps * sum(k ** (ell / 2) for ell in range(graph.longest_path + 1)))


def compose_intervened_matrix(weights: WeightMatrices, a: Action) -> np.ndarray:
    mask = action_mask(a, weights.B.shape[0])
    return np.where(mask[None, :], weights.B_star, weights.B)


def compose_many(weights: WeightMatrices, actions: Sequence[Action]) -> np.ndarray:
    """Stack of ``B_a`` for every action, shape ``(len(actions), N, N)``."""
    masks = action_masks(actions, weights.B.shape[0])
    return np.where(masks[:, None, :], weights.B_star[None], weights.B[None])


def _check_upper(M: np.ndarray) -> None:
    if np.any(np.tril(M) != 0):
        raise ValueError("effective matrix must be strictly upper triangular")


def forward_substitute(M: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Solve ``X = M^T X + eps`` in topological order; batched over leading axes."""
    X = np.array(eps, dtype=float, copy=True)
    for j in range(1, X.shape[-1]):
        X[..., j] += np.einsum("...i,...i->...", M[..., :j, j], X[..., :j])
    return X


def sample(instance: SemInstance, effective_matrix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _check_upper(effective_matrix)
    eps = instance.noise.sample(rng)
    return forward_substitute(effective_matrix, eps)


def reward_map(theta: np.ndarray, L: int) -> np.ndarray:
    """``f(theta) = sum_{l=0}^{L} theta^l e_N``; batched over leading axes."""
    n = theta.shape[-1]
    v = np.zeros(theta.shape[:-1])
    v[..., n - 1] = 1.0
    f = v.copy()
    for _ in range(L):
        v = np.einsum("...ij,...j->...i", theta, v)
        f += v
    return f


def expected_reward(instance: SemInstance, effective_matrix: np.ndarray) -> float | np.ndarray:
    """``E[X_N]`` under the given matrix (or stack of matrices)."""
    f = reward_map(effective_matrix, instance.graph.longest_path)
    out = f @ instance.nu
    return float(out) if np.ndim(out) == 0 else out


def power_set(n: int) -> list[Action]:
    return list(range(1 << n))


def distinct_actions(graph: CausalGraph) -> list[Action]:
    """All subsets of the nodes that have parents.

    Intervening on a root changes no edge weights, so these are exactly the
    interventions with distinct effects.
    """
    movable = graph.non_root_nodes
    out = []
    for bits in range(1 << len(movable)):
        out.append(action_from_nodes(movable[k] for k in range(len(movable)) if (bits >> k) & 1))
    return sorted(out)


def find_optimal_action(instance: SemInstance, action_set: Sequence[Action],
                        weights: WeightMatrices | None = None) -> tuple[Action, float]:
    """Exhaustive argmax of the expected reward; ties go to the smallest bitset.

    ``weights`` overrides the nominal matrices, e.g. to find the optimum of a
    deviated model.
    """
    if len(action_set) == 0:
        raise ValueError("empty action set")
    actions = sorted(action_set)
    mus = expected_reward(instance, compose_many(weights or instance.weights, actions))
    k = int(np.argmax(mus))
    return actions[k], float(mus[k])
