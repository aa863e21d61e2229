"""Controller-attacker games on a V-formation.

The controller is per-step adaptive-horizon MPC: at every step it optimises
plans of growing horizon from the current (possibly disturbed) state and
applies the first acceleration. It plans as if nobody interferes. The
attacker acts through the disturbance channel of ``flock.step``:

* ``BirdRemoval`` removes ``R`` birds once, at the start (BRG);
* ``RandomDisplacement`` displaces ``R`` random birds per round (RDG);
* ``AmpcAttack`` picks the birds and displacements by maximising the cost
  with the same PSO machinery, modelling the controller as idle.

Displacements have magnitude at most ``M``. RDG and AMPC attacks stop after
``T`` rounds; the controller keeps its remaining budget to recover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import control
from .ares import PlanStep, PlanTrace
from .dampc import local_ampc
from .errors import ConfigurationError
from .flock import ActionPlan, Disturbance, FlockParams, FlockState, batch_cost, cost, step
from .pso import PsoConfig, minimize
from .seeding import derive_seed


@dataclass(frozen=True)
class GameConfig:
    attacked_count: int = 1
    attack_rounds: int = 20
    magnitude_bound: float = 0.5
    budget: int = 40
    h_max: int = 5
    swarm_scale: int = 10
    threshold: float = 1e-3
    attacker_h_max: int = 1
    give_up: bool = False

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))

    def violations(self, bird_count: int | None = None) -> list[str]:
        errs = []
        if self.attacked_count < 0:
            errs.append("attacked_count must be >= 0")
        if bird_count is not None and self.attacked_count >= bird_count:
            errs.append("attacked_count must be smaller than the number of birds")
        if self.attack_rounds < 1:
            errs.append("attack_rounds must be >= 1")
        if self.budget < 1:
            errs.append("budget must be >= 1")
        if self.attack_rounds > self.budget:
            errs.append("attack_rounds must not exceed the controller budget")
        if not self.magnitude_bound >= 0:
            errs.append("magnitude_bound must be >= 0")
        if self.h_max < 1 or self.attacker_h_max < 1:
            errs.append("horizons must be >= 1")
        if self.swarm_scale < 1:
            errs.append("swarm_scale must be >= 1")
        if not self.threshold > 0:
            errs.append("threshold must be > 0")
        return errs


@dataclass(frozen=True, eq=False)
class GameOutcome:
    controller_won: bool
    convergence_duration: int
    avg_horizon: float
    trace: PlanTrace
    disturbances: tuple[Disturbance, ...] = ()

    @property
    def final_cost(self) -> float:
        return self.trace.final_cost


# ---------------------------------------------------------------------------
# attacker operations


def _check_count(R: int, B: int, upper: int | None = None) -> None:
    upper = B - 1 if upper is None else upper
    if R < 0 or R > upper:
        raise ConfigurationError(f"attacked bird count must lie in [0, {upper}]")


def attack_brg(state: FlockState, R: int, seed: int, birds=None) -> Disturbance:
    """Remove ``R`` birds chosen uniformly without replacement.

    ``birds`` (0-based indices) overrides the random choice.
    """
    B = state.bird_count
    if birds is not None:
        idx = np.unique(np.asarray(birds, dtype=int))
        if idx.size and (idx.min() < 0 or idx.max() >= B):
            raise ConfigurationError("bird index out of range")
        _check_count(idx.size, B)
    else:
        _check_count(R, B)
        idx = np.random.default_rng(seed).choice(B, size=R, replace=False)
    mask = np.zeros(B, bool)
    mask[idx] = True
    return Disturbance(np.zeros((B, 2)), mask)


def attack_rdg(
    state: FlockState, R: int, M: float, seed: int, t: int = 0, T: int | None = None
) -> Disturbance:
    """Displace ``R`` uniformly chosen birds by ``U[0, M]`` in a uniform direction."""
    B = state.bird_count
    _check_count(R, B)
    if M < 0:
        raise ConfigurationError("magnitude bound must be >= 0")
    if (T is not None and t >= T) or R == 0:
        return Disturbance.none(B)
    rng = np.random.default_rng(seed)
    live = np.flatnonzero(state.present)
    who = rng.choice(live, size=min(R, live.size), replace=False)
    mag = rng.uniform(0.0, M, size=who.size)
    ang = rng.uniform(0.0, 2 * math.pi, size=who.size)
    d = np.zeros((B, 2))
    d[who, 0] = mag * np.cos(ang)
    d[who, 1] = mag * np.sin(ang)
    return Disturbance(d)


def _decode_attack(z: np.ndarray, B: int, R: int, M: float) -> np.ndarray:
    """Search points ``(N, h*(B + 2B))`` to displacements ``(N, h, B, 2)``."""
    N = z.shape[0]
    z = z.reshape(N, -1, 3 * B)
    scores = z[..., :B]
    disp = control.square_to_disk(z[..., B:].reshape(N, -1, B, 2)) * M
    top = np.argsort(-scores, axis=-1, kind="stable")[..., :R]
    mask = np.zeros(scores.shape, bool)
    np.put_along_axis(mask, top, True, axis=-1)
    return np.where(mask[..., None], disp, 0.0)


def attack_ampc(
    state: FlockState,
    R: int,
    M: float,
    h_max: int,
    swarm_scale: int,
    seed: int,
    params: FlockParams,
    *,
    t: int = 0,
    T: int | None = None,
    budget: int | None = None,
    pso_config: PsoConfig = PsoConfig(),
) -> Disturbance:
    """Displacements that maximise the cost, found by adaptive-horizon PSO.

    Every step of an ``h``-step attack plan carries a score per bird and a
    displacement per bird; only the ``R`` best-scored birds are displaced.
    The flock is modelled as not accelerating. The horizon grows while the
    cost gain stays below ``J / (budget - t)``; the first step of the best
    plan is returned.
    """
    B = state.bird_count
    _check_count(R, B, upper=B)  # displacing every bird is a legal move here
    if M < 0:
        raise ConfigurationError("magnitude bound must be >= 0")
    if (T is not None and t >= T) or R == 0 or M == 0:
        return Disturbance.none(B)
    keep = state.present
    x0, v0 = state.active()
    b = x0.shape[0]
    R = min(R, b)
    J0 = cost(state, params)
    left = max((budget if budget is not None else (T or 1)) - t, 1)
    delta = J0 / left
    best_val, best_d = -math.inf, None
    for h in range(1, h_max + 1):
        D = 3 * b * h
        p = 2 * swarm_scale * h * B

        def objective(z):
            d = _decode_attack(z, b, R, M)
            x = x0 + h * v0 + d.sum(axis=1)
            return -batch_cost(x, np.broadcast_to(v0, x.shape), params)

        res = minimize(
            objective, -np.ones(D), np.ones(D), pso_config.with_particles(p),
            derive_seed(seed, h), vectorized=True,
        )
        val = -res.best_value
        if val > best_val:
            best_val = val
            best_d = _decode_attack(res.best_point[None, :], b, R, M)[0, 0]
        if val - J0 >= delta:
            break
    d = np.zeros((B, 2))
    d[keep] = best_d
    return Disturbance(d)


# ---------------------------------------------------------------------------
# attacker strategies


class Attacker(Protocol):
    name: str

    def __call__(self, state: FlockState, t: int, seed: int, config: GameConfig,
                 params: FlockParams) -> Disturbance: ...


@dataclass(frozen=True)
class NoAttack:
    name: str = "none"

    def __call__(self, state, t, seed, config, params):
        return Disturbance.none(state.bird_count)


@dataclass(frozen=True)
class BirdRemoval:
    """BRG; ``birds`` holds 1-based bird numbers, otherwise ``R`` random birds."""

    birds: tuple[int, ...] | None = None
    name: str = "brg"

    def __call__(self, state, t, seed, config, params):
        if t > 0:
            return Disturbance.none(state.bird_count)
        idx = None if self.birds is None else [b - 1 for b in self.birds]
        return attack_brg(state, config.attacked_count, seed, idx)


@dataclass(frozen=True)
class RandomDisplacement:
    name: str = "rdg"

    def __call__(self, state, t, seed, config, params):
        return attack_rdg(state, config.attacked_count, config.magnitude_bound, seed, t,
                          config.attack_rounds)


@dataclass(frozen=True)
class AmpcAttack:
    name: str = "ampc"
    pso_config: PsoConfig = field(default_factory=PsoConfig)

    def __call__(self, state, t, seed, config, params):
        return attack_ampc(
            state, config.attacked_count, config.magnitude_bound, config.attacker_h_max,
            config.swarm_scale, seed, params, t=t, T=config.attack_rounds,
            budget=config.budget, pso_config=self.pso_config,
        )


# ---------------------------------------------------------------------------
# game loop


def controller_step(
    state: FlockState,
    t: int,
    config: GameConfig,
    params: FlockParams,
    seed: int,
    pso_config: PsoConfig = PsoConfig(),
) -> tuple[np.ndarray, int, bool]:
    """First acceleration of the AMPC plan for the birds still present.

    Also returns the horizon used and whether the plan lowers the cost by the
    required decrement ``J / (budget - t)``.
    """
    B = state.bird_count
    keep = np.flatnonzero(state.present)
    sub = state.subset(keep)
    sub = FlockState(sub.positions, sub.velocities)
    J = cost(sub, params)
    delta = J / (config.budget - t)
    sol = local_ampc(
        sub, [None] * len(keep), delta, config.h_max, config.swarm_scale, params, seed,
        bird_total=len(keep), pso_config=pso_config,
    )
    a = np.zeros((B, 2))
    a[keep] = sol.accelerations[0]
    return a, sol.horizon, J - sol.last_cost >= delta


def play(
    initial: FlockState,
    attacker: Attacker,
    config: GameConfig,
    params: FlockParams,
    seed: int,
    *,
    pso_config: PsoConfig = PsoConfig(),
) -> GameOutcome:
    """Alternate attacker and controller until the flock is back in formation.

    The controller idles while the cost is at most the threshold. After the
    attack window the game stops as soon as the cost reaches the threshold,
    or when the budget of ``config.budget`` steps is spent.
    """
    B = initial.bird_count
    errs = config.violations(B)
    if errs:
        raise ConfigurationError("; ".join(errs))
    if cost(initial, params) > config.threshold:
        raise ConfigurationError("games must start from a V-formation (cost <= threshold)")
    windowed = not isinstance(attacker, (BirdRemoval, NoAttack))
    s = initial
    steps: list[PlanStep] = []
    dists: list[Disturbance] = []
    horizons: list[int] = []
    if isinstance(attacker, BirdRemoval):
        d0 = attacker(s, 0, derive_seed(seed, 2, 0), config, params)
        s = FlockState(s.positions, s.velocities, s.removed | d0.removed)
    for t in range(config.budget):
        J = cost(s, params)
        attacking = windowed and t < config.attack_rounds
        if J <= config.threshold and not attacking:
            break
        d = attacker(s, t, derive_seed(seed, 2, t), config, params) if attacking else None
        if J > config.threshold:
            a, h, reached = controller_step(s, t, config, params, derive_seed(seed, 1, t), pso_config)
            horizons.append(h)
            if not reached and config.give_up:
                break
        else:
            a, h = np.zeros((B, 2)), 0
        s = step(s, a, d)
        d = Disturbance.none(B) if d is None else d
        dists.append(d)
        steps.append(PlanStep(ActionPlan(a[None]), s, J, 0.0, max(h, 1), 0))
    final = cost(s, params)
    won = final <= config.threshold
    trace = PlanTrace(initial, tuple(steps), final, won, len(steps))
    avg_h = float(np.mean(horizons)) if horizons else 0.0
    return GameOutcome(won, len(horizons), avg_h, trace, tuple(dists))


@dataclass(frozen=True)
class Scenario:
    label: str
    attacker: Attacker
    config: GameConfig


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: str
    runs: int
    success_rate: float
    avg_duration: float
    avg_horizon: float

    COLUMNS = ("scenario", "runs", "success_rate", "avg_duration", "avg_horizon")

    def row(self) -> dict:
        return {c: getattr(self, c) for c in self.COLUMNS}


def summarize(label: str, outcomes: list[GameOutcome]) -> ScenarioSummary:
    """Success rate over all games; duration and horizon over games won."""
    won = [o for o in outcomes if o.controller_won]
    dur = float(np.mean([o.convergence_duration for o in won])) if won else math.nan
    hor = float(np.mean([o.avg_horizon for o in won])) if won else math.nan
    return ScenarioSummary(label, len(outcomes), len(won) / len(outcomes) if outcomes else math.nan, dur, hor)


def run_scenario(
    scenario: Scenario,
    initial: FlockState,
    runs: int,
    params: FlockParams,
    seed: int,
    *,
    pso_config: PsoConfig = PsoConfig(),
) -> tuple[ScenarioSummary, list[GameOutcome]]:
    outcomes = [
        play(initial, scenario.attacker, scenario.config, params, derive_seed(seed, n),
             pso_config=pso_config)
        for n in range(runs)
    ]
    return summarize(scenario.label, outcomes), outcomes


def standard_scenarios(swarm_scale: int = 10, h_max: int = 5) -> list[Scenario]:
    """The removal, random-displacement and AMPC-attack settings studied for B = 7."""
    out = []
    for birds in ((2,), (3,), (4,)):
        cfg = GameConfig(attacked_count=1, budget=40, h_max=h_max, swarm_scale=swarm_scale)
        out.append(Scenario(f"brg bird {birds[0]}", BirdRemoval(birds), cfg))
    for birds in ((2, 3), (2, 4), (2, 5), (2, 6), (3, 4), (3, 5)):
        cfg = GameConfig(attacked_count=2, budget=30, attack_rounds=20, h_max=h_max,
                         swarm_scale=swarm_scale)
        out.append(Scenario(f"brg birds {birds[0]},{birds[1]}", BirdRemoval(birds), cfg))
    for name, att in (("rdg", RandomDisplacement()), ("ampc", AmpcAttack())):
        for M in (0.5, 0.75, 1.0):
            cfg = GameConfig(attacked_count=1, attack_rounds=20, magnitude_bound=M, budget=40,
                             h_max=h_max, swarm_scale=swarm_scale)
            out.append(Scenario(f"{name} M={M}", att, cfg))
    return out
