"""Reference V-formations.

Birds are numbered 1..B across the V from the left wing tip to the right one
(index 0 is bird 1); the leader sits in the middle. Each arm bird trails its
neighbour towards the leader by the upwash peak offset, so it collects the
full upwash of exactly one bird and sees past every wing ahead of it.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .errors import ConfigurationError
from .flock import FlockParams, FlockState, batch_cost, cost
from .pso import PsoConfig, minimize


def leader_index(bird_count: int) -> int:
    return (bird_count - 1) // 2


def v_formation(bird_count: int, params: FlockParams, speed: float = 0.5) -> FlockState:
    """Analytic V heading along +x with the leader at the origin."""
    if bird_count < 1:
        raise ConfigurationError("bird_count must be >= 1")
    lateral, behind = params.upwash_mean
    lead = leader_index(bird_count)
    x = np.zeros((bird_count, 2))
    for i in range(bird_count):
        k = abs(i - lead)
        side = 1.0 if i < lead else -1.0
        x[i] = (-k * behind, side * k * lateral)
    v = np.tile([speed, 0.0], (bird_count, 1))
    return FlockState(x, v)


def polish(
    state: FlockState,
    params: FlockParams,
    seed: int,
    radius: float = 0.05,
    pso_config: PsoConfig = PsoConfig(particle_count=40, max_iterations=200),
) -> FlockState:
    """Lower the cost further by PSO over small position offsets.

    The unperturbed state is part of the initial swarm, so the result never
    costs more than ``state``.
    """
    x0, v0 = state.active()
    D = x0.size

    def objective(z):
        return batch_cost(x0 + z.reshape(-1, *x0.shape), np.broadcast_to(v0, (len(z), *v0.shape)), params)

    res = minimize(
        objective, -radius * np.ones(D), radius * np.ones(D), pso_config, seed,
        vectorized=True, initial_points=np.zeros((1, D)),
    )
    return FlockState(x0 + res.best_point.reshape(x0.shape), v0)


def pinned_v(bird_count: int) -> FlockState:
    """PSO-polished V-formation shipped with the package (B in 3, 5, 7)."""
    data = json.loads(resources.files(__package__).joinpath("data/v_formations.json").read_text())
    key = str(bird_count)
    if key not in data:
        raise ConfigurationError(f"no pinned V-formation for {bird_count} birds")
    entry = data[key]
    return FlockState(np.array(entry["positions"]), np.array(entry["velocities"]))


def pinned_cost(bird_count: int, params: FlockParams | None = None) -> float:
    params = FlockParams(bird_count=bird_count) if params is None else params
    return cost(pinned_v(bird_count), params)
