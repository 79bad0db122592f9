"""Intervention-selection policies.

``LcbPolicy`` is the robust linear causal bandit: weighted least squares per
node, confidence ellipsoids, and optimistic propagation of node means through
the graph. With ``C = 1`` it is LinSEM-UCB. ``Ucb1Policy`` ignores the graph
and treats every action as an independent arm.

All policies run ``reps`` independent repetitions in lockstep: ``select``
returns one action per repetition and ``step`` takes one sample row per
repetition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimation import (
    CLIP_MODES, INT, OBS, ConfidenceConfig, Ellipsoid, EstimatorBank, confidence_radius,
    max_linear_over_ellipsoid,
)
from .sem import Action, CausalGraph, SemInstance, action_masks

ALGORITHMS = ("robust-lcb", "linsem-ucb", "ucb1")


@dataclass(frozen=True)
class OptimisticValuation:
    mu_tilde: np.ndarray
    theta_tilde: np.ndarray


def support_batch(center: np.ndarray, Minv: np.ndarray, radius: float, x: np.ndarray,
                  clip: str = "min") -> np.ndarray:
    """Vectorized ``max_linear_over_ellipsoid`` value over leading axes.

    ``"exact"`` loops over the entries and is meant for small instances.
    """
    Mx = np.einsum("...de,...e->...d", Minv, x)
    width = np.sqrt(np.maximum(np.einsum("...d,...d->...", x, Mx), 0.0))
    val = np.einsum("...d,...d->...", center, x) + radius * width
    if clip == "min":
        return np.minimum(val, np.linalg.norm(x, axis=-1))
    if clip == "radial":
        safe = np.where(width > 0, width, 1.0)
        theta = center + radius * Mx / safe[..., None]
        norm = np.linalg.norm(theta, axis=-1)
        scaled = np.einsum("...d,...d->...", theta, x) / np.maximum(norm, 1.0)
        return np.where(width > 0, scaled, 0.0)
    if clip == "exact":
        out = np.empty(val.shape)
        x = np.broadcast_to(x, val.shape + x.shape[-1:])
        center = np.broadcast_to(center, x.shape)
        Minv = np.broadcast_to(Minv, x.shape + x.shape[-1:])
        for idx in np.ndindex(val.shape):
            xi = x[idx]
            if not np.any(xi):
                out[idx] = 0.0
                continue
            M = np.linalg.inv(Minv[idx])
            out[idx] = max_linear_over_ellipsoid(Ellipsoid(center[idx], (M + M.T) / 2, radius), xi, "exact")[0]
        return out
    raise ValueError(f"clip must be one of {CLIP_MODES}, got {clip!r}")


def _levels(graph: CausalGraph) -> list[np.ndarray]:
    depth = np.asarray(graph.causal_depth)
    return [np.flatnonzero(depth == k) for k in range(1, graph.longest_path + 1)]


class LcbPolicy:
    """Robust-LCB over ``reps`` repetitions.

    Args:
        instance: supplies the known graph and noise mean; the weights are not read.
        config: confidence settings; ``config.budget_C`` is the learner's C.
        reps: number of lockstep repetitions.
        actions: ``None`` (every subset of ``intervenable``) or an explicit list,
            which switches to per-action evaluation.
        intervenable: nodes the per-node assembly may intervene on (default all).
        clip: how the unit ball is applied to each column, see
            :func:`max_linear_over_ellipsoid`.
    """

    def __init__(self, instance: SemInstance, config: ConfidenceConfig, reps: int = 1,
                 actions: Sequence[Action] | None = None, intervenable: Sequence[int] | None = None,
                 clip: str = "min", kind: str = "robust-lcb"):
        if clip not in CLIP_MODES:
            raise ValueError(f"clip must be one of {CLIP_MODES}")
        if actions is not None and len(actions) == 0:
            raise ValueError("empty action set")
        self.kind = kind
        self.graph = instance.graph
        self.n = instance.n
        self.nu = instance.nu.copy()
        self.config = config
        self.reps = reps
        self.clip = clip
        self.actions = None if actions is None else sorted(actions)
        allowed = np.zeros(self.n, dtype=bool)
        allowed[list(range(self.n)) if intervenable is None else list(intervenable)] = True
        self.allowed = allowed
        self.bank = EstimatorBank(self.graph, reps, self.nu)
        self.levels = _levels(self.graph)
        self.t = 0
        self._last: np.ndarray | None = None

    @property
    def radius(self) -> float:
        # ellipsoids for round t+1 are built from the state after round t
        return confidence_radius(self.config, self.t)

    def _propagate(self, sides: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """Greedy optimistic means.

        With ``sides`` (``(R, N)`` bool) the action is fixed; with ``None`` every
        node picks the side giving the larger optimistic mean (ties: observe).
        Returns ``(mu_tilde (R, N), chosen sides (R, N))``.
        """
        bank = self.bank
        cent = bank.centers()
        Minv = bank.metric_inverse()
        beta = self.radius
        R = self.reps
        mu = np.zeros((R, self.n + 1))
        mu[:, :self.n] = self.nu
        chosen = np.zeros((R, self.n), dtype=bool)
        for nodes in self.levels:
            x = mu[:, bank.pa_idx[nodes]]
            vals = support_batch(cent[:, nodes], Minv[:, nodes], beta, x[:, :, None, :], self.clip)
            if sides is None:
                pick = (vals[..., INT] > vals[..., OBS]) & self.allowed[nodes]
            else:
                pick = sides[:, nodes]
            mu[:, nodes] = self.nu[nodes] + np.where(pick, vals[..., INT], vals[..., OBS])
            chosen[:, nodes] = pick
        return mu[:, :self.n], chosen

    def select(self) -> np.ndarray:
        if self.actions is None:
            _, chosen = self._propagate(None)
            acts = (chosen.astype(np.int64) << np.arange(self.n)).sum(axis=1)
        else:
            acts = np.empty(self.reps, dtype=np.int64)
            for r in range(self.reps):
                vals = [ucb_of_action(self, a, rep=r)[0] for a in self.actions]
                acts[r] = self.actions[int(np.argmax(vals))]
        self._last = acts
        return acts

    def ucb_values(self, actions: Sequence[Action]) -> np.ndarray:
        """Greedy UCB of each action for each rep, shape ``(R, len(actions))``."""
        masks = action_masks(actions, self.n)
        out = np.empty((self.reps, len(actions)))
        for k, m in enumerate(masks):
            mu, _ = self._propagate(np.broadcast_to(m, (self.reps, self.n)))
            out[:, k] = mu[:, -1]
        return out

    def step(self, X: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        """Weight and absorb one sample per repetition; returns the weights used."""
        X = np.asarray(X, dtype=float).reshape(self.reps, -1)
        if X.shape[1] != self.n:
            raise ValueError(f"sample has {X.shape[1]} entries, expected {self.n}")
        acts = self._last if actions is None else np.asarray(actions, dtype=np.int64)
        if acts is None:
            raise ValueError("step called before select")
        side = ((acts[:, None] >> np.arange(self.n)[None, :]) & 1).astype(bool)
        xpa = self.bank.gather(X)
        w = self.bank.weights(side, xpa, self.config.learner_C)
        self.bank.update(side, X, w)
        self.t += 1
        self._last = None
        return w


def _rep_ellipsoids(policy: LcbPolicy, a: Action, rep: int) -> list[Ellipsoid | None]:
    bank = policy.bank
    cent = bank.centers()[rep]
    Minv = bank.metric_inverse()[rep]
    beta = policy.radius
    out: list[Ellipsoid | None] = []
    for i, pa in enumerate(policy.graph.parents):
        if not pa:
            out.append(None)
            continue
        k = len(pa)
        side = INT if (a >> i) & 1 else OBS
        M = np.linalg.inv(Minv[i, side, :k, :k])
        out.append(Ellipsoid(cent[i, side, :k], (M + M.T) / 2, beta))
    return out


def _means(theta: np.ndarray, nu: np.ndarray) -> np.ndarray:
    return np.linalg.solve(np.eye(len(nu)) - theta.T, nu)


def ucb_of_action(policy: LcbPolicy, a: Action, rep: int = 0,
                  refine: bool = True) -> tuple[float, OptimisticValuation]:
    """Optimistic reward of one action for one repetition.

    Greedy topological propagation is exact when every optimistic parent mean
    and every total effect on the reward is non-negative. Otherwise (and when
    ``refine``) block coordinate ascent over the columns improves on it: the
    reward is affine in each column with slope ``f_i * mu_pa(i)``, so each block
    step is one support-function evaluation.
    """
    graph = policy.graph
    n, nu, clip = policy.n, policy.nu, policy.clip
    ells = _rep_ellipsoids(policy, a, rep)
    theta = np.zeros((n, n))
    mu = nu.copy()
    for i, pa in enumerate(graph.parents):
        if ells[i] is None:
            continue
        _, th = max_linear_over_ellipsoid(ells[i], mu[list(pa)], clip)
        theta[list(pa), i] = th
        mu[i] = nu[i] + th @ mu[list(pa)]
    if refine:
        theta, mu = _coordinate_ascent(graph, ells, nu, theta, clip)
    return float(mu[-1]), OptimisticValuation(mu, theta)


def _coordinate_ascent(graph, ells, nu, theta, clip, sweeps: int = 50):
    n = len(nu)
    e_n = np.zeros(n)
    e_n[-1] = 1
    mu = _means(theta, nu)
    for _ in range(sweeps):
        improved = False
        for i, pa in enumerate(graph.parents):
            if ells[i] is None:
                continue
            f = np.linalg.solve(np.eye(n) - theta, e_n)
            if f[i] == 0:
                continue
            if f[i] > 0 and np.all(mu[list(pa)] >= 0):
                continue
            _, th = max_linear_over_ellipsoid(ells[i], f[i] * mu[list(pa)], clip)
            cand = theta.copy()
            cand[:, i] = 0
            cand[list(pa), i] = th
            mu_c = _means(cand, nu)
            if mu_c[-1] > mu[-1] + 1e-12:
                theta, mu, improved = cand, mu_c, True
        if not improved:
            break
    return theta, mu


class Ucb1Policy:
    """Classical UCB1 with index ``mean + sqrt(2 log t / n)``; unpulled arms first."""

    kind = "ucb1"

    def __init__(self, instance: SemInstance, actions: Sequence[Action], reps: int = 1):
        if len(actions) == 0:
            raise ValueError("empty action set")
        self.n = instance.n
        self.actions = np.asarray(sorted(actions), dtype=np.int64)
        self.reps = reps
        self.counts = np.zeros((reps, len(self.actions)), dtype=np.int64)
        self.sums = np.zeros((reps, len(self.actions)))
        self.t = 0
        self._last: np.ndarray | None = None

    def select(self) -> np.ndarray:
        unpulled = self.counts == 0
        if self.t == 0:
            idx = np.zeros(self.reps, dtype=np.int64)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                index = self.sums / self.counts + np.sqrt(2 * math.log(self.t + 1) / self.counts)
            index = np.where(unpulled, np.inf, index)
            idx = np.argmax(index, axis=1)
        self._last = idx
        return self.actions[idx]

    def step(self, X: np.ndarray, actions: np.ndarray | None = None) -> None:
        X = np.asarray(X, dtype=float).reshape(self.reps, -1)
        if X.shape[1] != self.n:
            raise ValueError(f"sample has {X.shape[1]} entries, expected {self.n}")
        if actions is not None:
            idx = np.searchsorted(self.actions, np.asarray(actions, dtype=np.int64))
        elif self._last is not None:
            idx = self._last
        else:
            raise ValueError("step called before select")
        rows = np.arange(self.reps)
        self.counts[rows, idx] += 1
        self.sums[rows, idx] += X[:, -1]
        self.t += 1
        self._last = None


class FixedPolicy:
    """Always plays the same action (per repetition); used for oracle checks."""

    kind = "fixed"

    def __init__(self, action: Action | Sequence[Action], reps: int = 1):
        self.acts = np.broadcast_to(np.asarray(action, dtype=np.int64), (reps,)).copy()
        self.reps = reps

    def select(self) -> np.ndarray:
        return self.acts.copy()

    def step(self, X, actions=None) -> None:
        pass


def default_delta(n: int, horizon: int) -> float:
    return 1.0 / (2 * n * horizon)


def make_policy(name: str, instance: SemInstance, horizon: int, budget_C: float, reps: int = 1,
                actions: Sequence[Action] | None = None, intervenable: Sequence[int] | None = None,
                delta: float | None = None, clip: str = "min", radius_scale: float = 1.0,
                normalized_radius: bool = False):
    """Build a policy by CLI name. ``linsem-ucb`` ignores ``budget_C`` and uses C = 1."""
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
    if name == "ucb1":
        if actions is None:
            raise ValueError("ucb1 needs an explicit action set")
        return Ucb1Policy(instance, actions, reps)
    g = instance.graph
    C = 1.0 if name == "linsem-ucb" else budget_C
    config = ConfidenceConfig(
        delta=default_delta(instance.n, horizon) if delta is None else delta,
        budget_C=C, d=g.max_in_degree, m=instance.value_bound,
        m_eps=instance.noise.norm_bound, radius_scale=radius_scale, normalized=normalized_radius)
    return LcbPolicy(instance, config, reps, None, intervenable, clip, kind=name)
