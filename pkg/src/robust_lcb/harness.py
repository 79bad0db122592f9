"""Experiment orchestration: interaction loop, regret accounting, sweeps, outputs."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .deviation import DeviationSchedule, deviation_stack, load_schedule, make_front_loaded_adversary
from .policies import ALGORITHMS, make_policy
from .presets import load_sem_file, preset
from .sem import (
    Action, SemInstance, WeightMatrices, distinct_actions, expected_reward, find_optimal_action,
    forward_substitute, power_set, reward_map,
)

log = logging.getLogger(__name__)

REGRET_MODES = ("nominal", "dynamic")


@dataclass
class ExperimentSpec:
    preset: str | None = "hierarchical"
    sem_file: str | None = None
    adversary: str = "front-loaded"
    budget_C: float = 100.0
    schedule_file: str | None = None
    policies: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    horizon: int = 10_000
    reps: int = 20
    seed: int = 42
    actions: str = "distinct"
    delta: float | None = None
    clip: str = "min"
    radius: str = "normalized"
    radius_scale: float = 1.0
    regret: str = "nominal"
    realized: bool = False
    checkpoints: list[int] | None = None
    dump_every: int | None = None
    out_dir: str | None = None

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.policies:
            raise ValueError("at least one policy is required")
        for p in self.policies:
            if p not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {p!r}")
        if self.adversary not in ("none", "front-loaded", "file"):
            raise ValueError(f"unknown adversary {self.adversary!r}")
        if self.actions not in ("distinct", "power-set"):
            raise ValueError(f"unknown action set {self.actions!r}")
        if self.radius not in ("theory", "normalized"):
            raise ValueError(f"radius must be 'theory' or 'normalized', got {self.radius!r}")
        if self.regret not in REGRET_MODES:
            raise ValueError(f"regret must be one of {REGRET_MODES}")
        if self.dump_every is not None and self.dump_every < 1:
            raise ValueError("dump_every must be >= 1")
        if (self.preset is None) == (self.sem_file is None):
            raise ValueError("give exactly one of preset or sem_file")

    def checkpoint_rounds(self) -> np.ndarray:
        if self.checkpoints:
            return np.asarray(sorted(set(self.checkpoints)), dtype=np.int64)
        step = 1 if self.horizon <= 20_000 else 10
        ts = np.arange(step, self.horizon + 1, step)
        if ts[-1] != self.horizon:
            ts = np.append(ts, self.horizon)
        return ts


@dataclass
class RegretTrace:
    seed: int
    actions: np.ndarray
    realized: np.ndarray
    instantaneous: np.ndarray
    cumulative: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.cumulative)


@dataclass
class Summary:
    policy: str
    rounds: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    reps: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_stderr(self) -> float:
        return float(self.stderr[-1])


def build_instance(spec: ExperimentSpec) -> SemInstance:
    return load_sem_file(spec.sem_file) if spec.sem_file else preset(spec.preset)


def build_actions(spec: ExperimentSpec, instance: SemInstance) -> list[Action]:
    return distinct_actions(instance.graph) if spec.actions == "distinct" else power_set(instance.n)


def build_schedule(spec: ExperimentSpec, instance: SemInstance) -> DeviationSchedule:
    if spec.schedule_file:
        sched = load_schedule(spec.schedule_file, instance)
        if sched.horizon < spec.horizon:
            raise ValueError(f"schedule horizon {sched.horizon} is shorter than {spec.horizon}")
        return sched
    if spec.adversary == "none" or spec.budget_C == 0:
        return DeviationSchedule(spec.horizon)
    sched = make_front_loaded_adversary(instance, spec.budget_C, spec.horizon)
    if not sched.flips_optimum:
        log.warning("front-loaded adversary did not flip the optimal action")
    return sched


def rep_seeds(master: int, reps: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master).spawn(reps)


def _dynamic_optima(instance: SemInstance, obs: np.ndarray, ints: np.ndarray,
                    actions: Sequence[Action]) -> np.ndarray:
    W = instance.weights
    return np.array([find_optimal_action(instance, actions, WeightMatrices(W.B + o, W.B_star + i))[1]
                     for o, i in zip(obs, ints)])


def run_batch(instance: SemInstance, schedule: DeviationSchedule, policy, horizon: int,
              seeds: Sequence[np.random.SeedSequence], actions: Sequence[Action],
              regret: str = "nominal", realized: bool = False, on_round=None) -> list[RegretTrace]:
    """Play ``horizon`` rounds for ``len(seeds)`` lockstep repetitions of ``policy``.

    Regret per round is ``mu_a* - E[X_N | D_a(t)]`` computed in closed form
    (``realized=True`` uses the sampled ``X_N`` instead). ``regret="dynamic"``
    benchmarks each round against the best action of that round's deviated model.
    """
    if schedule.horizon < horizon:
        raise ValueError("schedule horizon is shorter than the run")
    R = len(seeds)
    n = instance.n
    L = instance.graph.longest_path
    nu = instance.nu
    W = instance.weights
    _, mu_star = find_optimal_action(instance, actions)
    idx, dev_obs, dev_int = deviation_stack(schedule, n)
    if regret == "dynamic":
        best = _dynamic_optima(instance, dev_obs, dev_int, actions)
    else:
        best = np.full(len(dev_obs), mu_star)
    noise = np.stack([instance.noise.sample(np.random.default_rng(s), horizon) for s in seeds])
    acts = np.empty((R, horizon), dtype=np.int64)
    real = np.empty((R, horizon))
    inst = np.empty((R, horizon))
    bits = np.arange(n)
    for t in range(1, horizon + 1):
        a = np.asarray(policy.select(), dtype=np.int64)
        mask = ((a[:, None] >> bits) & 1).astype(bool)[:, None, :]
        k = idx[t]
        D = np.where(mask, W.B_star, W.B)
        if k:
            D = D + np.where(mask, dev_int[k], dev_obs[k])
        X = forward_substitute(D, noise[:, t - 1])
        policy.step(X, a)
        acts[:, t - 1] = a
        real[:, t - 1] = X[:, -1]
        got = X[:, -1] if realized else reward_map(D, L) @ nu
        inst[:, t - 1] = best[k] - got
        if on_round is not None:
            on_round(t, policy)
    cum = np.cumsum(inst, axis=1)
    return [RegretTrace(int(s.generate_state(1)[0]), acts[r], real[r], inst[r], cum[r])
            for r, s in enumerate(seeds)]


def run_episode(instance: SemInstance, schedule: DeviationSchedule, policy, horizon: int,
                seed: np.random.SeedSequence | int, actions: Sequence[Action], **kw) -> RegretTrace:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return run_batch(instance, schedule, policy, horizon, [seed], actions, **kw)[0]


def aggregate(traces: Sequence[RegretTrace], policy: str = "", rounds: np.ndarray | None = None) -> Summary:
    """Per-round mean and standard error of cumulative regret."""
    if not traces:
        raise ValueError("no traces to aggregate")
    T = traces[0].horizon
    if any(tr.horizon != T for tr in traces):
        raise ValueError("traces have mismatched horizons")
    cum = np.stack([tr.cumulative for tr in traces])
    rounds = np.arange(1, T + 1) if rounds is None else np.asarray(rounds)
    sel = cum[:, rounds - 1]
    mean = sel.mean(axis=0)
    se = sel.std(axis=0, ddof=1) / np.sqrt(len(traces)) if len(traces) > 1 else np.zeros_like(mean)
    return Summary(policy, rounds, mean, se, len(traces))


def run_experiment(spec: ExperimentSpec, snapshots: dict[str, list] | None = None) -> dict[str, Summary]:
    """Run every policy of ``spec``; estimator snapshots go into ``snapshots`` if given."""
    spec.validate()
    instance = build_instance(spec)
    actions = build_actions(spec, instance)
    schedule = build_schedule(spec, instance)
    seeds = rep_seeds(spec.seed, spec.reps)
    intervenable = instance.graph.non_root_nodes if spec.actions == "distinct" else None
    out = {}
    for name in spec.policies:
        t0 = time.perf_counter()
        policy = make_policy(name, instance, spec.horizon, spec.budget_C, spec.reps, actions,
                             intervenable, spec.delta, spec.clip, spec.radius_scale,
                             spec.radius == "normalized")
        hook = None
        if snapshots is not None and spec.dump_every and hasattr(policy, "bank"):
            recs = snapshots.setdefault(name, [])

            def hook(t, pol, every=spec.dump_every, recs=recs):
                if t % every == 0 or t == spec.horizon:
                    recs.extend(pol.bank.snapshot_records(t))
        traces = run_batch(instance, schedule, policy, spec.horizon, seeds, actions,
                           spec.regret, spec.realized, hook)
        out[name] = aggregate(traces, name, spec.checkpoint_rounds())
        log.info("%s: final regret %.2f +- %.2f (%.1fs)", name, out[name].final_mean,
                 out[name].final_stderr, time.perf_counter() - t0)
    return out


def _sweep_point(args):
    spec, C = args
    point = ExperimentSpec(**{**asdict(spec), "budget_C": float(C), "checkpoints": [spec.horizon]})
    return C, run_experiment(point)


def sweep_C(spec: ExperimentSpec, C_values: Sequence[float], jobs: int = 1) -> list[dict]:
    """Final cumulative regret per policy for each budget ``C``."""
    if not C_values:
        raise ValueError("empty C list")
    tasks = [(spec, C) for C in C_values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = []
    for C, summaries in results:
        for name, s in summaries.items():
            rows.append({"policy": name, "C": float(C), "final_regret": s.final_mean,
                         "stderr": s.final_stderr})
    return rows


# ---------------------------------------------------------------------------
# outputs


def _fmt(x: float) -> str:
    return repr(float(x))


def curves_csv(summaries: dict[str, Summary], overlay: dict[str, np.ndarray] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "t", "mean_cum_regret", "stderr"])
    for name, s in summaries.items():
        for t, m, e in zip(s.rounds, s.mean, s.stderr):
            w.writerow([name, int(t), _fmt(m), _fmt(e)])
    for name, (ts, vals) in (overlay or {}).items():
        for t, v in zip(ts, vals):
            w.writerow([name, int(t), _fmt(v), _fmt(0.0)])
    return buf.getvalue()


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "C", "final_regret", "stderr"])
    for r in rows:
        w.writerow([r["policy"], _fmt(r["C"]), _fmt(r["final_regret"]), _fmt(r["stderr"])])
    return buf.getvalue()


def bound_overlays(instance: SemInstance, spec: ExperimentSpec, rounds: np.ndarray,
                   scale: float | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Upper/lower bound shapes on the checkpoint grid (shape only, unit constants)."""
    g = instance.graph
    params = analysis.BoundParams(g.max_in_degree, g.longest_path, spec.horizon, spec.budget_C,
                                  1.0 if scale is None else scale)
    return {"bound:upper": (rounds, analysis.upper_bound_curve(params, rounds)),
            "bound:lower": (rounds, analysis.lower_bound_curve(params, rounds))}


def emit_outputs(out_dir: str | Path, spec: ExperimentSpec, summaries: dict[str, Summary] | None = None,
                 sweep_rows: list[dict] | None = None, overlays: bool = True,
                 plots: bool = True, snapshots: dict[str, list] | None = None) -> list[Path]:
    """Write CSVs, SVG plots and a manifest; nothing is written if there are no results."""
    if not summaries and not sweep_rows:
        raise ValueError("no policy results to write")
    out = Path(out_dir)
    files: dict[Path, str] = {}
    if summaries:
        overlay = None
        if overlays:
            instance = build_instance(spec)
            overlay = bound_overlays(instance, spec, next(iter(summaries.values())).rounds)
        files[out / "regret_curves.csv"] = curves_csv(summaries, overlay)
    if sweep_rows:
        files[out / "regret_vs_C.csv"] = sweep_csv(sweep_rows)
    for name, recs in (snapshots or {}).items():
        files[out / f"estimates_{name}.jsonl"] = "".join(json.dumps(r) + "\n" for r in recs)
    manifest = {"spec": asdict(spec), "seeds": [int(s.generate_state(1)[0]) for s in rep_seeds(spec.seed, spec.reps)]}
    files[out / "manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    try:
        out.mkdir(parents=True, exist_ok=True)
        for path, text in files.items():
            path.write_text(text)
    except OSError as exc:
        raise OSError(f"failed writing outputs to {out}: {exc}") from exc
    written = list(files)
    if plots:
        from . import plotting
        if summaries:
            written.append(plotting.plot_curves(summaries, out / "regret_curves.svg"))
        if sweep_rows:
            written.append(plotting.plot_sweep(sweep_rows, out / "regret_vs_C.svg"))
    return written
