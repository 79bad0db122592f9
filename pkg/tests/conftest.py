import numpy as np
import pytest

from robust_lcb.sem import CausalGraph, SemInstance, UniformNoise, WeightMatrices


def random_instance(rng, n, p_edge=0.6, nonneg=True, low=0.0, high=2.0):
    """Random DAG on ``n`` nodes in topological order; the last node always has a parent."""
    edges = [(i, j) for j in range(1, n) for i in range(j) if rng.random() < p_edge]
    if n > 1 and not any(j == n - 1 for _, j in edges):
        edges.append((n - 2, n - 1))
    graph = CausalGraph(n, frozenset(edges))

    def columns():
        M = np.zeros((n, n))
        for i, j in edges:
            M[i, j] = rng.random() if nonneg else rng.normal()
        norms = np.linalg.norm(M, axis=0)
        scale = rng.uniform(0.3, 1.0, n)
        M = M / np.where(norms > 0, norms, 1.0) * scale
        return M

    return SemInstance(graph, WeightMatrices(columns(), columns()), UniformNoise.constant(n, low, high))


def chain_instance(b_obs=0.5, b_int=1.0):
    graph = CausalGraph(2, frozenset({(0, 1)}))
    B = np.array([[0.0, b_obs], [0.0, 0.0]])
    Bs = np.array([[0.0, b_int], [0.0, 0.0]])
    return SemInstance(graph, WeightMatrices(B, Bs), UniformNoise.constant(2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
