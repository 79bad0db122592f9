"""Time-varying model deviations and their aggregate budget.

A deviation at round ``t`` is stored as two ``N x N`` matrices: column ``i`` of
``obs`` is added to ``[B]_i`` when node ``i`` is not intervened, column ``i`` of
``int`` is added to ``[B*]_i`` when it is. Identical matrices give an
action-independent deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sem import Action, SemInstance, WeightMatrices, action_mask, compose_intervened_matrix, find_optimal_action


@dataclass(frozen=True)
class RoundDeviation:
    obs: np.ndarray
    int: np.ndarray

    def for_action(self, a: Action) -> np.ndarray:
        mask = action_mask(a, self.obs.shape[0])
        return np.where(mask[None, :], self.int, self.obs)

    def column_norms(self) -> np.ndarray:
        """Per-node worst case over actions of the column deviation norm."""
        return np.maximum(np.linalg.norm(self.obs, axis=0), np.linalg.norm(self.int, axis=0))


@dataclass(frozen=True)
class DeviationSchedule:
    horizon: int
    rounds: dict[int, RoundDeviation] = field(default_factory=dict)
    budget_C: float = 0.0
    flips_optimum: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for t in self.rounds:
            if not 1 <= t <= self.horizon:
                raise ValueError(f"deviation at round {t} outside 1..{self.horizon}")

    def at(self, t: int) -> RoundDeviation | None:
        return self.rounds.get(t)

    @property
    def deviated_rounds(self) -> list[int]:
        return sorted(self.rounds)

    def to_records(self) -> list[dict]:
        recs = []
        for t in self.deviated_rounds:
            dev = self.rounds[t]
            for side, M in (("obs", dev.obs), ("int", dev.int)):
                for i in np.flatnonzero(np.any(M != 0, axis=0)):
                    recs.append({"t": t, "node": int(i), "side": side, "deviation": M[:, i].tolist()})
        return recs

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "budget_C": self.budget_C,
                "flips_optimum": self.flips_optimum, "records": self.to_records()}

    @classmethod
    def from_json(cls, data: dict, n: int) -> "DeviationSchedule":
        rounds: dict[int, RoundDeviation] = {}
        for rec in data["records"]:
            t = int(rec["t"])
            if t not in rounds:
                rounds[t] = RoundDeviation(np.zeros((n, n)), np.zeros((n, n)))
            vec = np.asarray(rec["deviation"], dtype=float)
            if vec.shape != (n,):
                raise ValueError(f"deviation vector at round {t} has length {vec.size}, expected {n}")
            side = rec["side"]
            if side not in ("obs", "int"):
                raise ValueError(f"unknown side {side!r}")
            getattr(rounds[t], side)[:, int(rec["node"])] = vec
        sched = cls(int(data["horizon"]), rounds, 0.0, bool(data.get("flips_optimum", False)))
        declared = data.get("budget_C")
        audited = audit_budget(sched)
        if declared is not None and abs(float(declared) - audited) > 1e-9:
            raise ValueError(f"schedule declares C={declared} but audits to {audited}")
        return cls(sched.horizon, rounds, audited, sched.flips_optimum)


def save_schedule(schedule: DeviationSchedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schedule.to_json()))


def load_schedule(path: str | Path, instance: SemInstance) -> DeviationSchedule:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read schedule file {path}: {exc}") from exc
    sched = DeviationSchedule.from_json(data, instance.n)
    check_schedule(sched, instance)
    return sched


def audit_budget(schedule: DeviationSchedule) -> float:
    """``max_i sum_t max_a ||[Delta_a(t)]_i||``."""
    if not schedule.rounds:
        return 0.0
    totals = sum(dev.column_norms() for dev in schedule.rounds.values())
    return float(np.max(totals))


def check_schedule(schedule: DeviationSchedule, instance: SemInstance, tol: float = 1e-9) -> None:
    """Deviations stay on existing edges and keep every deviated column in the unit ball."""
    mask = instance.graph.edge_mask()
    W = instance.weights
    for t, dev in schedule.rounds.items():
        for side, M, base in (("obs", dev.obs, W.B), ("int", dev.int, W.B_star)):
            if M.shape != mask.shape:
                raise ValueError(f"round {t}: deviation shape {M.shape} does not match the graph")
            if np.any(M[~mask] != 0):
                raise ValueError(f"round {t}: {side} deviation touches a non-edge")
            if np.any(np.linalg.norm(base + M, axis=0) > 1 + tol):
                raise ValueError(f"round {t}: {side} deviated column leaves the unit ball")


def effective_matrix(schedule: DeviationSchedule, instance: SemInstance, t: int, a: Action) -> np.ndarray:
    """``D_a(t) = B_a + Delta_a(t)``."""
    if not 1 <= t <= schedule.horizon:
        raise ValueError(f"round {t} outside 1..{schedule.horizon}")
    Ba = compose_intervened_matrix(instance.weights, a)
    dev = schedule.rounds.get(t)
    return Ba if dev is None else Ba + dev.for_action(a)


def flipped_weights(instance: SemInstance) -> WeightMatrices:
    """Deviated model used by the front-loaded adversary.

    Observational columns take their interventional values, so not
    intervening looks as good as intervening, and the reward node's
    interventional column is negated, which sends the nominal optimum (when it
    intervenes on the reward node) to its lowest reachable value. Negation is
    the largest column move that stays in the unit ball.
    """
    W = instance.weights
    B_star = W.B_star.copy()
    B_star[:, -1] *= -1
    return WeightMatrices(W.B_star.copy(), B_star)


def make_front_loaded_adversary(instance: SemInstance, C: float, horizon: int,
                                target: WeightMatrices | None = None) -> DeviationSchedule:
    """Spend the whole budget ``C`` in the first rounds, flipping the optimal action.

    Full deviations (nominal columns replaced by ``target``) are applied for
    ``floor(C / delta_max)`` rounds and one scaled partial round absorbs the
    remainder so the audited budget equals ``C``. ``flips_optimum`` reports
    whether the full deviation makes the nominal optimum strictly suboptimal.
    """
    if C < 0:
        raise ValueError("budget C must be non-negative")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if C == 0:
        return DeviationSchedule(horizon, {}, 0.0, False)
    W = instance.weights
    target = target or flipped_weights(instance)
    full = RoundDeviation(target.B - W.B, target.B_star - W.B_star)
    delta_max = float(full.column_norms().max())
    if delta_max == 0:
        return DeviationSchedule(horizon, {}, 0.0, False)
    n_full = math.floor(C / delta_max + 1e-12)
    frac = C / delta_max - n_full
    if frac < 1e-12:
        frac = 0.0
    needed = n_full + (frac > 0)
    if needed > horizon:
        raise ValueError(f"budget C={C} needs {needed} rounds at deviation {delta_max:.4g}, "
                         f"more than the horizon {horizon}")
    rounds = {t: full for t in range(1, n_full + 1)}
    if frac > 0:
        rounds[n_full + 1] = RoundDeviation(frac * full.obs, frac * full.int)
    actions = list(range(1 << instance.n)) if instance.n <= 16 else None
    flips = False
    if actions is not None:
        a_nom, _ = find_optimal_action(instance, actions)
        _, best_dev = find_optimal_action(instance, actions, target)
        mu_nom_dev = find_optimal_action(instance, [a_nom], target)[1]
        flips = mu_nom_dev < best_dev - 1e-9
    sched = DeviationSchedule(horizon, rounds, 0.0, flips)
    return DeviationSchedule(horizon, rounds, audit_budget(sched), flips)


def deviation_stack(schedule: DeviationSchedule, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense per-round lookup for the simulator.

    Returns ``(index, obs, int)`` where ``index[t]`` (``t`` in ``0..T``) is the
    row of ``obs``/``int`` holding round ``t``'s deviation; row 0 is all zeros.
    """
    index = np.zeros(schedule.horizon + 1, dtype=np.int64)
    obs = [np.zeros((n, n))]
    ints = [np.zeros((n, n))]
    seen: dict[int, int] = {}
    for t in schedule.deviated_rounds:
        dev = schedule.rounds[t]
        key = id(dev)
        if key not in seen:
            seen[key] = len(obs)
            obs.append(dev.obs)
            ints.append(dev.int)
        index[t] = seen[key]
    return index, np.stack(obs), np.stack(ints)
