"""Adaptive receding-horizon plan synthesis (ARES).

A population of clones of the flock is pushed through a sequence of cost
levels. At every level each clone runs PSO over ``h``-step acceleration
plans. When the best clone beats the previous level by more than its
dynamic threshold the level is committed and the population is resampled
(importance splitting); otherwise the horizon grows up to ``h_max``, then the
swarm grows by ``p_inc`` up to ``p_max``, and finally the search gives up.

The committed levels form a strictly decreasing sequence, so they act as a
Lyapunov function for the synthesised plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import control
from .errors import ConfigurationError
from .flock import ActionPlan, FlockParams, FlockState, cost, rollout_states, step
from .pso import PsoConfig, minimize_many
from .seeding import derive_seed, make_rng


@dataclass(frozen=True)
class AresConfig:
    threshold: float = 1e-3
    p_start: int = 10
    p_inc: int = 5
    p_max: int = 40
    h_max: int = 5
    max_levels: int = 20
    clone_count: int = 20

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))

    def violations(self) -> list[str]:
        errs = []
        if not self.threshold > 0:
            errs.append("threshold must be > 0")
        if min(self.p_start, self.p_inc, self.p_max) < 1:
            errs.append("p_start, p_inc, p_max must be positive")
        if self.p_start > self.p_max:
            errs.append("p_start must not exceed p_max")
        if self.p_start < 2:
            errs.append("p_start must be >= 2 (PSO needs two particles)")
        if self.h_max < 1:
            errs.append("h_max must be >= 1")
        if self.max_levels < 2:
            errs.append("max_levels must be >= 2")
        if self.clone_count < 2:
            errs.append("clone_count must be >= 2")
        return errs


@dataclass(frozen=True, eq=False)
class _Node:
    """Link in a clone's ancestry; shared between clones after resampling."""

    state: FlockState
    parent: "_Node | None" = None
    action: ActionPlan | None = None
    level: float = math.inf
    delta: float = 0.0
    horizon: int = 0
    particles: int = 0


@dataclass(frozen=True, eq=False)
class Clone:
    state: FlockState
    last_cost: float
    threshold: float = 0.0
    pending_plan: ActionPlan | None = None
    pending_state: FlockState | None = None
    pending_cost: float = math.inf
    node: _Node | None = None


@dataclass(frozen=True)
class PlanStep:
    action: ActionPlan
    state: FlockState
    level: float
    delta: float
    horizon: int
    particles: int


@dataclass(frozen=True)
class PlanTrace:
    initial: FlockState
    steps: tuple[PlanStep, ...]
    final_cost: float
    converged: bool
    levels_tried: int = 0

    @property
    def levels(self) -> list[float]:
        return [s.level for s in self.steps]

    @property
    def final_state(self) -> FlockState:
        return self.steps[-1].state if self.steps else self.initial

    def single_steps(self):
        """Yield ``(acceleration, state_after)`` for every elementary time step."""
        s = self.initial
        for st in self.steps:
            for a in st.action.accelerations:
                s = step(s, a)
                yield a, s

    @property
    def duration(self) -> int:
        return sum(st.horizon for st in self.steps)

    @property
    def mean_horizon(self) -> float:
        return float(np.mean([st.horizon for st in self.steps])) if self.steps else 0.0


def _clone_seeds(seed: int, n: int) -> list[int]:
    return [derive_seed(seed, k) for k in range(n)]


def simulate(
    clones: list[Clone],
    h: int,
    i: int,
    m: int,
    pso_config: PsoConfig,
    params: FlockParams,
    seed: int,
) -> list[Clone]:
    """Run one PSO per clone over ``h``-step plans and update the thresholds.

    The zero plan is always part of the initial swarm. A clone whose cost
    drops by more than its threshold gets the new threshold ``J / (m - i)``.
    """
    if h < 1:
        raise ConfigurationError("horizon must be >= 1")
    if not 0 < i < m:
        raise ConfigurationError("level index must satisfy 0 < i < m")
    B = clones[0].state.bird_count
    D = 2 * B * h
    xs = np.stack([c.state.positions for c in clones])
    vs = np.stack([c.state.velocities for c in clones])

    def objective(points, which):
        out = np.empty(points.shape[:2])
        for n, k in enumerate(which):
            out[n] = control.rollout_costs(xs[k], vs[k], points[n], params)
        return out

    results = minimize_many(
        objective,
        -np.ones(D),
        np.ones(D),
        pso_config,
        _clone_seeds(seed, len(clones)),
        initial_points=np.zeros((1, D)),
    )
    out = []
    for k, (c, res) in enumerate(zip(clones, results)):
        _, _, acc = control.rollout(xs[k], vs[k], res.best_point[None, :], params)
        plan = ActionPlan(acc[0])
        end = rollout_states(c.state, plan)[-1]
        achieved = cost(end, params)
        delta = c.threshold
        if c.last_cost - achieved > delta:
            delta = achieved / (m - i)
        out.append(
            replace(c, threshold=delta, pending_plan=plan, pending_state=end, pending_cost=achieved)
        )
    return out


def resample(clones: list[Clone], seed: int) -> list[Clone]:
    """Replace every clone not strictly below the median cost by a random good one."""
    costs = np.array([c.last_cost for c in clones])
    good = np.flatnonzero(costs < np.median(costs))
    if good.size == 0:
        return list(clones)
    rng = np.random.default_rng(seed)
    keep = set(good.tolist())
    out = []
    for k, c in enumerate(clones):
        out.append(c if k in keep else clones[int(rng.choice(good))])
    return out


def _commit(c: Clone, level: float, delta: float, h: int, p: int) -> Clone:
    node = _Node(c.pending_state, c.node, c.pending_plan, level, delta, h, p)
    return Clone(c.pending_state, c.pending_cost, c.threshold, node=node)


def _trace_from(clone: Clone, initial: FlockState, params: FlockParams, phi: float, tried: int):
    steps = []
    node = clone.node
    while node is not None and node.parent is not None:
        steps.append(PlanStep(node.action, node.state, node.level, node.delta, node.horizon, node.particles))
        node = node.parent
    steps.reverse()
    final = steps[-1].state if steps else initial
    fc = cost(final, params)
    return PlanTrace(initial, tuple(steps), fc, fc <= phi, tried)


def synthesize(
    initial: FlockState,
    config: AresConfig,
    pso_config: PsoConfig,
    params: FlockParams,
    seed: int,
) -> PlanTrace:
    """Synthesise a plan driving ``initial`` below ``config.threshold``.

    Non-convergence is reported through ``PlanTrace.converged``.
    """
    level = cost(initial, params)
    if not math.isfinite(level):
        raise ConfigurationError("initial cost must be finite")
    root = _Node(initial, level=level)
    clones = [Clone(initial, level, 0.0, node=root) for _ in range(config.clone_count)]
    i, h, p = 1, 1, config.p_start
    m = config.max_levels
    attempt = 0
    while level > config.threshold and i < m:
        clones = simulate(
            clones, h, i, m, pso_config.with_particles(p), params, derive_seed(seed, 1, attempt)
        )
        attempt += 1
        best = min(range(len(clones)), key=lambda k: clones[k].pending_cost)
        cb = clones[best]
        if level - cb.pending_cost > cb.threshold:
            level = cb.pending_cost
            clones = [_commit(c, level, cb.threshold, h, p) for c in clones]
            clones = resample(clones, derive_seed(seed, 2, i))
            i += 1
            h, p = 1, config.p_start
        elif h < config.h_max:
            h += 1
        elif p < config.p_max:
            h, p = 1, min(p + config.p_inc, config.p_max)
        else:
            break
    best = min(clones, key=lambda c: c.last_cost)
    return _trace_from(best, initial, params, config.threshold, attempt)
