"""SEM specification files and named presets.

A SEM file is JSON::

    {
      "nodes": ["A", "B", "Y"],
      "edges": [["A", "Y"], ["B", "Y"]],
      "reward": "Y",
      "obs_weights": {"rule": "c/sqrt(indegree)", "c": 0.5},
      "int_weights": [["A", "Y", 0.7], ["B", "Y", 0.7]],
      "noise": {"kind": "uniform", "params": {"low": 0, "high": 2}}
    }

Weights are either the ``c/sqrt(indegree)`` rule or explicit ``[from, to, w]``
triples. ``noise.mean`` may be given and is checked against the distribution.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .sem import CausalGraph, SemInstance, UniformNoise, WeightMatrices, weights_from_rule

RULE = "c/sqrt(indegree)"


def hierarchical_spec(leaves: int = 9, mids: int = 3, obs_c: float = 0.5, int_c: float = 1.0) -> dict[str, Any]:
    """Three-layer graph: each mid node has ``leaves // mids`` distinct leaf parents,
    the reward node has every mid node as a parent."""
    if leaves % mids:
        raise ValueError("leaves must split evenly across mid nodes")
    per = leaves // mids
    leaf_names = [f"L{k + 1}" for k in range(leaves)]
    mid_names = [f"M{k + 1}" for k in range(mids)]
    edges = [[leaf_names[m * per + k], mid_names[m]] for m in range(mids) for k in range(per)]
    edges += [[m, "Y"] for m in mid_names]
    return {
        "nodes": leaf_names + mid_names + ["Y"],
        "edges": edges,
        "reward": "Y",
        "obs_weights": {"rule": RULE, "c": obs_c},
        "int_weights": {"rule": RULE, "c": int_c},
        "noise": {"kind": "uniform", "params": {"low": 0.0, "high": 2.0}},
    }


def chain_spec(b_obs: float = 0.5, b_int: float = 1.0) -> dict[str, Any]:
    return {
        "nodes": ["X1", "X2"],
        "edges": [["X1", "X2"]],
        "obs_weights": [["X1", "X2", b_obs]],
        "int_weights": [["X1", "X2", b_int]],
        "noise": {"kind": "uniform", "params": {"low": 0.0, "high": 2.0}},
    }


PRESETS = {
    "hierarchical": hierarchical_spec,
    "chain": chain_spec,
}


def preset(name: str) -> SemInstance:
    try:
        return instance_from_spec(PRESETS[name]())
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _weights(graph: CausalGraph, raw, index: dict[str, int], key: str) -> np.ndarray:
    if isinstance(raw, dict):
        if raw.get("rule") != RULE:
            raise ValueError(f"{key}: unsupported rule {raw.get('rule')!r}")
        c = float(raw["c"])
        return weights_from_rule(graph, c, c).B
    W = np.zeros((graph.node_count, graph.node_count))
    for u, v, w in raw:
        i, j = index[str(u)], index[str(v)]
        if (i, j) not in graph.edges:
            raise ValueError(f"{key}: ({u}, {v}) is not an edge")
        W[i, j] = float(w)
    return W


def _per_node(value, names: tuple[str, ...]) -> np.ndarray:
    if isinstance(value, dict):
        return np.array([float(value[n]) for n in names])
    if isinstance(value, (list, tuple)):
        if len(value) != len(names):
            raise ValueError("per-node noise parameter has the wrong length")
        return np.array(value, dtype=float)
    return np.full(len(names), float(value))


def instance_from_spec(spec: dict[str, Any]) -> SemInstance:
    names = [str(n) for n in spec["nodes"]]
    graph = CausalGraph.from_named_edges(names, [tuple(e) for e in spec["edges"]], spec.get("reward"))
    index = {n: k for k, n in enumerate(graph.names)}
    B = _weights(graph, spec["obs_weights"], index, "obs_weights")
    Bs = _weights(graph, spec["int_weights"], index, "int_weights")
    noise_spec = spec.get("noise", {"kind": "uniform", "params": {"low": 0.0, "high": 2.0}})
    if noise_spec.get("kind", "uniform") != "uniform":
        raise ValueError(f"unsupported noise kind {noise_spec.get('kind')!r}")
    params = noise_spec.get("params", {})
    noise = UniformNoise(_per_node(params.get("low", 0.0), graph.names),
                         _per_node(params.get("high", 2.0), graph.names))
    if "mean" in noise_spec:
        declared = _per_node(noise_spec["mean"], graph.names)
        if not np.allclose(declared, noise.mean):
            raise ValueError("declared noise mean disagrees with the noise distribution")
    return SemInstance(graph, WeightMatrices(B, Bs), noise)


def load_sem_file(path: str | Path) -> SemInstance:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read SEM file {path}: {exc}") from exc
    return instance_from_spec(spec)


def instance_to_spec(instance: SemInstance) -> dict[str, Any]:
    """Explicit-weight JSON description that round-trips through ``instance_from_spec``."""
    g = instance.graph
    names = g.names
    edges = sorted(g.edges)
    noise = instance.noise
    return {
        "nodes": list(names),
        "edges": [[names[i], names[j]] for i, j in edges],
        "reward": names[-1],
        "obs_weights": [[names[i], names[j], float(instance.weights.B[i, j])] for i, j in edges],
        "int_weights": [[names[i], names[j], float(instance.weights.B_star[i, j])] for i, j in edges],
        "noise": {"kind": "uniform",
                  "params": {"low": noise.low.tolist(), "high": noise.high.tolist()},
                  "mean": noise.mean.tolist()},
    }
