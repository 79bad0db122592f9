"""Causal bandits on linear SEMs under temporally deviating models."""

from .sem import (
    CausalGraph, SemInstance, UniformNoise, WeightMatrices, compose_intervened_matrix,
    distinct_actions, expected_reward, find_optimal_action, power_set, reward_map, sample,
)
from .presets import load_sem_file, preset

__version__ = "0.1.0"
