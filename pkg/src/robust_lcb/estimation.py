"""Weighted least-squares estimation of SEM columns and confidence ellipsoids.

Two layers live here:

* Per-node reference operations on :class:`NodeEstimatorState`, written in the
  full ``N``-dimensional coordinates (zero outside the parent set). They are
  small, direct, and used as the ground truth in tests.
* :class:`EstimatorBank`, the batched engine the policies use. It stores every
  node of every repetition in compact parent coordinates, shape
  ``(R, N, 2, d, d)`` with side 0 = observational, side 1 = interventional,
  and keeps Gram inverses current with Sherman-Morrison updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .sem import Action, CausalGraph

OBS, INT = 0, 1
REFRESH_EVERY = 1000


@dataclass(frozen=True)
class ConfidenceConfig:
    delta: float
    budget_C: float
    d: int
    m: float
    m_eps: float
    radius_scale: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.budget_C < 0:
            raise ValueError("budget C must be non-negative")
        if self.radius_scale <= 0:
            raise ValueError("radius_scale must be positive")

    @property
    def learner_C(self) -> float:
        # C < 1 would push weights above 1; C = 1 is the time-invariant setting
        return max(float(self.budget_C), 1.0)


def confidence_radius(config: ConfidenceConfig, t: float) -> float:
    """``sqrt(2 log(1/delta) + d log(1 + m^2 t / (d C^2))) + 1 + m``, times ``radius_scale``.

    With ``config.normalized`` the value is divided by its ``t = 0`` value, so
    the radius starts at ``radius_scale`` and keeps only the growth in ``t``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    beta = _raw_radius(config, t)
    if config.normalized:
        beta /= _raw_radius(config, 0)
    return config.radius_scale * beta


def _raw_radius(config: ConfidenceConfig, t: float) -> float:
    d = max(config.d, 1)
    C = config.learner_C
    inner = 2 * math.log(1 / config.delta) + d * math.log1p(config.m ** 2 * t / (d * C ** 2))
    return math.sqrt(inner) + 1 + config.m


# ---------------------------------------------------------------------------
# per-node reference implementation


@dataclass(frozen=True)
class NodeEstimatorState:
    node: int
    parents: tuple[int, ...]
    b_obs: np.ndarray
    b_int: np.ndarray
    V_obs: np.ndarray
    V_int: np.ndarray
    Vt_obs: np.ndarray
    Vt_int: np.ndarray
    s_obs: np.ndarray
    s_int: np.ndarray
    n_obs: int = 0
    n_int: int = 0

    @classmethod
    def fresh(cls, n: int, node: int, parents) -> "NodeEstimatorState":
        z = np.zeros(n)
        eye = np.eye(n)
        return cls(node, tuple(parents), z, z, eye, eye, eye, eye, z, z)

    def side(self, a: Action) -> str:
        return "int" if (a >> self.node) & 1 else "obs"

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """``X_pa(i)``: zero every coordinate outside the parent set."""
        out = np.zeros_like(x, dtype=float)
        idx = list(self.parents)
        out[idx] = x[idx]
        return out


def exploration_bonus(state: NodeEstimatorState, a: Action, x_pa: np.ndarray) -> float:
    """``||x_pa||`` in the inverse of the squared-weight Gram matrix of the side ``a`` selects."""
    Vt = state.Vt_int if state.side(a) == "int" else state.Vt_obs
    return float(math.sqrt(x_pa @ np.linalg.solve(Vt, x_pa)))


def compute_weight(state: NodeEstimatorState, a: Action, x_pa: np.ndarray, C: float) -> float:
    if C <= 0:
        raise ValueError("C must be positive")
    bonus = exploration_bonus(state, a, x_pa)
    if bonus == 0:
        return 1.0 / C
    return min(1.0 / C, 1.0 / (C * bonus))


def update_node(state: NodeEstimatorState, a: Action, x: np.ndarray, weight: float,
                nu_i: float) -> NodeEstimatorState:
    """Fold one sample into the side selected by ``a``; the other side is untouched."""
    xp = state.restrict(np.asarray(x, dtype=float))
    resid = float(x[state.node]) - nu_i
    outer = np.outer(xp, xp)
    if state.side(a) == "int":
        V = state.V_int + weight * outer
        s = state.s_int + weight * xp * resid
        return replace(state, V_int=V, Vt_int=state.Vt_int + weight ** 2 * outer, s_int=s,
                       b_int=np.linalg.solve(V, s), n_int=state.n_int + 1)
    V = state.V_obs + weight * outer
    s = state.s_obs + weight * xp * resid
    return replace(state, V_obs=V, Vt_obs=state.Vt_obs + weight ** 2 * outer, s_obs=s,
                   b_obs=np.linalg.solve(V, s), n_obs=state.n_obs + 1)


@dataclass(frozen=True)
class Ellipsoid:
    """``{theta : ||theta - center||_metric <= radius}``, to be intersected with the unit ball."""

    center: np.ndarray
    metric: np.ndarray
    radius: float

    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        diff = theta - self.center
        return float(diff @ self.metric @ diff) <= self.radius ** 2 + tol


def ellipsoid_for(state: NodeEstimatorState, a: Action, radius: float) -> Ellipsoid:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if state.side(a) == "int":
        V, Vt, c = state.V_int, state.Vt_int, state.b_int
    else:
        V, Vt, c = state.V_obs, state.Vt_obs, state.b_obs
    M = V @ np.linalg.solve(Vt, V)
    return Ellipsoid(c.copy(), (M + M.T) / 2, float(radius))


CLIP_MODES = ("min", "radial", "exact")


def max_linear_over_ellipsoid(ell: Ellipsoid, direction: np.ndarray,
                              clip: str = "min") -> tuple[float, np.ndarray]:
    """Maximize ``<theta, direction>`` over the ellipsoid, then account for the unit ball.

    The unconstrained maximizer is ``c + r M^-1 x / ||x||_{M^-1}``. How the unit
    ball enters depends on ``clip``:

    ``"min"``
        value ``min(<c,x> + r ||x||_{M^-1}, ||x||)``, the smaller of the two
        support functions. Never below the true maximum over the intersection.
    ``"radial"``
        the maximizer is scaled onto the unit sphere if it leaves the ball.
    ``"exact"``
        solves the two-constraint problem numerically (small instances only).
    """
    x = np.asarray(direction, dtype=float)
    c = ell.center
    if not np.any(x):
        return 0.0, c.copy()
    if clip == "exact":
        return max_linear_exact(ell, x)
    Minv_x = np.linalg.lstsq(ell.metric, x, rcond=None)[0]
    q = float(x @ Minv_x)
    width = math.sqrt(max(q, 0.0))
    theta = c + (ell.radius * Minv_x / width if width > 0 else 0.0)
    value = float(c @ x + ell.radius * width)
    if clip == "radial":
        norm = float(np.linalg.norm(theta))
        if norm > 1:
            theta = theta / norm
            value = float(theta @ x)
        return value, theta
    if clip != "min":
        raise ValueError(f"clip must be one of {CLIP_MODES}")
    xn = float(np.linalg.norm(x))
    if xn < value:
        return xn, x / xn
    return value, theta


def max_linear_exact(ell: Ellipsoid, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact ``max <theta, x>`` over ellipsoid intersected with the unit ball.

    Uses the two-multiplier Lagrange dual, which is smooth and convex here; the
    single-constraint cases are settled in closed form first. Raises if the
    intersection is empty.
    """
    c, M, r = ell.center, ell.metric, ell.radius
    n = len(x)
    Minv_x = np.linalg.solve(M, x)
    width = math.sqrt(float(x @ Minv_x))
    theta_e = c + r * Minv_x / width
    if np.linalg.norm(theta_e) <= 1 + 1e-12:
        return float(theta_e @ x), theta_e
    theta_b = x / np.linalg.norm(x)
    if ell.contains(theta_b, tol=1e-12):
        return float(np.linalg.norm(x)), theta_b
    if not _intersects(ell):
        raise ValueError("ellipsoid does not meet the unit ball")
    eye = np.eye(n)
    Mc = M @ c

    def theta_of(lam):
        return np.linalg.solve(2 * (lam[0] * M + lam[1] * eye), x + 2 * lam[0] * Mc)

    def dual(lam):
        th = theta_of(lam)
        g1 = float((th - c) @ M @ (th - c)) - r ** 2
        g2 = float(th @ th) - 1
        val = float(x @ th) - lam[0] * g1 - lam[1] * g2
        return val, np.array([-g1, -g2])

    best = None
    for start in ([1.0, 1.0], [0.1, 10.0], [10.0, 0.1]):
        res = optimize.minimize(dual, np.array(start), jac=True, method="L-BFGS-B",
                                bounds=[(1e-12, None), (1e-12, None)],
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    th = theta_of(best.x)
    # pull the primal point back inside both sets; moves are O(dual gap)
    th = _repair(th, ell)
    return float(th @ x), th


def _intersects(ell: Ellipsoid) -> bool:
    # nearest ellipsoid point to the origin, via the same dual trick in one dimension
    c, M, r = ell.center, ell.metric, ell.radius
    if ell.contains(np.zeros_like(c)):
        return True
    eye = np.eye(len(c))

    def point(mu):
        return np.linalg.solve(eye + mu * M, mu * M @ c)

    lo, hi = 0.0, 1.0
    while not ell.contains(point(hi)):
        hi *= 2
        if hi > 1e12:
            return False
    for _ in range(200):
        mid = (lo + hi) / 2
        if ell.contains(point(mid)):
            hi = mid
        else:
            lo = mid
    return float(np.linalg.norm(point(hi))) <= 1 + 1e-9


def _repair(theta: np.ndarray, ell: Ellipsoid) -> np.ndarray:
    th = theta.copy()
    for _ in range(50):
        norm = np.linalg.norm(th)
        if norm > 1:
            th = th / norm
        diff = th - ell.center
        q = math.sqrt(max(float(diff @ ell.metric @ diff), 0.0))
        if q > ell.radius:
            th = ell.center + diff * (ell.radius / q)
        if np.linalg.norm(th) <= 1 + 1e-12 and ell.contains(th, tol=1e-10):
            break
    return th


# ---------------------------------------------------------------------------
# batched engine


def parent_index(graph: CausalGraph) -> tuple[np.ndarray, np.ndarray]:
    """``(index, valid)`` of shape ``(N, d)``; padded slots point at column ``N``."""
    n = graph.node_count
    d = max(graph.max_in_degree, 1)
    idx = np.full((n, d), n, dtype=np.int64)
    for i, pa in enumerate(graph.parents):
        idx[i, :len(pa)] = pa
    return idx, idx < n


class EstimatorBank:
    """W-OLS state for every node of ``reps`` independent runs."""

    def __init__(self, graph: CausalGraph, reps: int, nu: np.ndarray):
        self.graph = graph
        self.reps = reps
        self.n = graph.node_count
        self.pa_idx, self.pa_valid = parent_index(graph)
        self.d = self.pa_idx.shape[1]
        self.nu = np.asarray(nu, dtype=float)
        shape = (reps, self.n, 2)
        eye = np.broadcast_to(np.eye(self.d), (*shape, self.d, self.d))
        self.V = eye.copy()
        self.Vinv = eye.copy()
        self.Vt = eye.copy()
        self.Vtinv = eye.copy()
        self.s = np.zeros((*shape, self.d))
        self.count = np.zeros(shape, dtype=np.int64)
        self.updates = 0

    def gather(self, values: np.ndarray) -> np.ndarray:
        """Parent values ``(R, N, d)`` from node values ``(R, N)``; padding is zero."""
        padded = np.concatenate([values, np.zeros((values.shape[0], 1))], axis=1)
        return padded[:, self.pa_idx]

    def _pick(self, arr: np.ndarray, side: np.ndarray) -> np.ndarray:
        return np.take_along_axis(arr, side.astype(np.int64)[:, :, None, None, None], axis=2)[:, :, 0]

    def bonus(self, side: np.ndarray, xpa: np.ndarray) -> np.ndarray:
        """Exploration bonus per (rep, node) for the chosen side; ``side`` is ``(R, N)`` bool."""
        Vtinv = self._pick(self.Vtinv, side)
        q = np.einsum("rnd,rnde,rne->rn", xpa, Vtinv, xpa)
        return np.sqrt(np.maximum(q, 0.0))

    def weights(self, side: np.ndarray, xpa: np.ndarray, C: float | np.ndarray) -> np.ndarray:
        b = self.bonus(side, xpa)
        C = np.broadcast_to(np.asarray(C, dtype=float).reshape(-1, 1), b.shape)
        with np.errstate(divide="ignore"):
            w = np.where(b > 0, np.minimum(1.0 / C, 1.0 / (C * b)), 1.0 / C)
        return w

    def update(self, side: np.ndarray, X: np.ndarray, w: np.ndarray) -> None:
        """One round: every node of every rep receives its sample on its chosen side."""
        xpa = self.gather(X)
        resid = X - self.nu[None, :]
        sel = np.stack([~side, side], axis=2).astype(float)  # (R, N, 2)
        ws = w[:, :, None] * sel
        outer = np.einsum("rnd,rne->rnde", xpa, xpa)[:, :, None]
        self.V += ws[..., None, None] * outer
        self.Vt += (ws ** 2)[..., None, None] * outer
        self.s += (ws * resid[:, :, None])[..., None] * xpa[:, :, None, :]
        self.count += sel.astype(np.int64)
        self.updates += 1
        if self.updates % REFRESH_EVERY == 0:
            self.refresh()
            return
        x2 = np.broadcast_to(xpa[:, :, None, :], ws.shape + (self.d,))
        self.Vinv = _sherman_morrison(self.Vinv, x2, ws)
        self.Vtinv = _sherman_morrison(self.Vtinv, x2, ws ** 2)

    def refresh(self) -> None:
        self.Vinv = np.linalg.inv(self.V)
        self.Vtinv = np.linalg.inv(self.Vt)

    def centers(self) -> np.ndarray:
        return np.einsum("rnkde,rnke->rnkd", self.Vinv, self.s)

    def metric_inverse(self) -> np.ndarray:
        """``(V Vt^-1 V)^-1 = V^-1 Vt V^-1`` for every (rep, node, side)."""
        Minv = self.Vinv @ self.Vt @ self.Vinv
        return (Minv + np.swapaxes(Minv, -1, -2)) / 2

    def node_state(self, rep: int, node: int) -> NodeEstimatorState:
        """Full-coordinate snapshot of one node, comparable with the reference ops."""
        n = self.n
        pa = self.graph.parents[node]
        k = len(pa)

        def embed_vec(v):
            out = np.zeros(n)
            out[list(pa)] = v[:k]
            return out

        def embed_mat(Mx):
            out = np.eye(n)
            out[np.ix_(pa, pa)] = Mx[:k, :k]
            return out

        c = self.centers()[rep, node]
        return NodeEstimatorState(
            node, pa, embed_vec(c[OBS]), embed_vec(c[INT]),
            embed_mat(self.V[rep, node, OBS]), embed_mat(self.V[rep, node, INT]),
            embed_mat(self.Vt[rep, node, OBS]), embed_mat(self.Vt[rep, node, INT]),
            embed_vec(self.s[rep, node, OBS]), embed_vec(self.s[rep, node, INT]),
            int(self.count[rep, node, OBS]), int(self.count[rep, node, INT]))

    def snapshot_records(self, t: int, run_ids=None) -> list[dict]:
        """Per (run, node, side) diagnostics for offline inspection."""
        run_ids = list(range(self.reps)) if run_ids is None else list(run_ids)
        cent = self.centers()
        eig = np.linalg.eigvalsh(self.V)
        recs = []
        for r, rid in enumerate(run_ids):
            for i in range(self.n):
                k = len(self.graph.parents[i])
                if k == 0:
                    continue
                for side, name in ((OBS, "obs"), (INT, "int")):
                    recs.append({
                        "run_id": rid, "t": t, "node": i, "side": name,
                        "estimate": cent[r, i, side, :k].tolist(),
                        "lambda_min": float(eig[r, i, side, 0]),
                        "lambda_max": float(eig[r, i, side, -1]),
                        "count": int(self.count[r, i, side]),
                    })
        return recs


def _sherman_morrison(Ainv: np.ndarray, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched ``(A + w x x^T)^-1`` from ``A^-1``."""
    Ax = np.einsum("...de,...e->...d", Ainv, x)
    denom = 1.0 + w * np.einsum("...d,...d->...", x, Ax)
    return Ainv - (w / denom)[..., None, None] * np.einsum("...d,...e->...de", Ax, Ax)
