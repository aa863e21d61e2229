"""Distributed adaptive-neighbourhood MPC.

Every control step runs consensus rounds among the birds. In each round each
bird that still lacks a plan optimises its ``k``-nearest subflock with
``local_ampc``; the proposal with the lowest lookahead cost wins, and all
members of the winning subflock fix their acceleration sequences. Once every
bird is fixed, the first accelerations are applied. The lookahead cost
decides whether a new level is committed, and the neighbourhood size
shrinks after a commit and grows otherwise.

Consensus is simulated in process: one coordinator collects the proposals
of a round, which stands in for the broadcast to a central hub.

Identical subproblems (same members, same fixed entries, same round) draw
from the same random stream, so a subflock's proposal does not depend on
which of its members computed it. With ``k = B`` every bird solves the same
problem and the run coincides with centralised AMPC (see ``centralized_ampc``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import control
from .ares import PlanStep, PlanTrace
from .errors import ConfigurationError, InternalError
from .flock import ActionPlan, FlockParams, FlockState, cost, step
from .pso import PsoConfig, minimize
from .seeding import derive_seed


@dataclass(frozen=True)
class DampcConfig:
    threshold: float = 0.1
    h_max: int = 3
    max_steps: int = 60
    swarm_scale: int = 10
    k_min: int = 2
    k_max: int | None = None

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))

    def violations(self, bird_count: int | None = None) -> list[str]:
        errs = []
        if not self.threshold > 0:
            errs.append("threshold must be > 0")
        if self.h_max < 1:
            errs.append("h_max must be >= 1")
        if self.max_steps < 2:
            errs.append("max_steps must be >= 2")
        if self.swarm_scale < 1:
            errs.append("swarm_scale must be a positive integer")
        if self.k_min < 1:
            errs.append("k_min must be >= 1")
        if self.k_max is not None and self.k_max < self.k_min:
            errs.append("k_max must be >= k_min")
        if bird_count is not None and self.k_max is not None and self.k_max > bird_count:
            errs.append("k_max must not exceed the number of birds")
        if bird_count is not None and self.k_min > bird_count:
            errs.append("k_min must not exceed the number of birds")
        return errs

    def bounds(self, bird_count: int) -> tuple[int, int]:
        k_max = bird_count if self.k_max is None else self.k_max
        return self.k_min, k_max


@dataclass(frozen=True, eq=False)
class NeighborhoodSolution:
    member_ids: tuple[int, ...]
    accelerations: np.ndarray  # (L, k, 2)
    states: tuple[FlockState, ...]  # subflock states after steps 1..L
    last_cost: float

    @property
    def horizon(self) -> int:
        return self.accelerations.shape[0]

    def sequence(self, bird: int) -> np.ndarray:
        return self.accelerations[:, self.member_ids.index(bird)]


@dataclass
class LevelLedger:
    levels: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    neighborhood_sizes: list[int] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("step", "cost", "level", "delta", "k", "rounds", "horizon", "committed")

    def to_csv(self) -> str:
        from .flock import format_float

        lines = [",".join(self.COLUMNS)]
        for r in self.rows:
            cells = []
            for c in self.COLUMNS:
                val = r[c]
                cells.append(format_float(val) if isinstance(val, float) else str(int(val)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    @property
    def mean_neighborhood(self) -> float:
        ks = [r["k"] for r in self.rows]
        return float(np.mean(ks)) if ks else 0.0


class FixedPlans:
    """Write-once store of per-bird acceleration sequences for one time step."""

    def __init__(self, bird_count: int):
        self._seqs: list[np.ndarray | None] = [None] * bird_count

    def is_fixed(self, bird: int) -> bool:
        return self._seqs[bird] is not None

    def get(self, bird: int) -> np.ndarray | None:
        return self._seqs[bird]

    def fix(self, bird: int, seq: np.ndarray) -> None:
        seq = np.array(seq, dtype=float)
        old = self._seqs[bird]
        if old is not None:
            n = min(len(old), len(seq))
            if not np.array_equal(old[:n], seq[:n]):
                raise InternalError(f"attempt to overwrite fixed actions of bird {bird}")
            if len(seq) <= len(old):
                return
        seq.setflags(write=False)
        self._seqs[bird] = seq

    @property
    def unfixed(self) -> list[int]:
        return [i for i, s in enumerate(self._seqs) if s is None]

    def padded(self) -> np.ndarray:
        """All sequences padded with zero accelerations to a common length."""
        L = max(len(s) for s in self._seqs)
        out = np.zeros((L, len(self._seqs), 2))
        for i, s in enumerate(self._seqs):
            out[: len(s), i] = s
        return out


def neighbors(i: int, k: int, state: FlockState) -> tuple[int, ...]:
    """The ``k`` birds nearest to ``i`` (``i`` included), ties to the lower index."""
    B = state.bird_count
    if not 1 <= k <= B:
        raise ConfigurationError(f"neighbourhood size must lie in [1, {B}]")
    d = np.linalg.norm(state.positions - state.positions[i], axis=1)
    others = [j for j in range(B) if j != i]
    others.sort(key=lambda j: (d[j], j))
    return tuple(sorted([i] + others[: k - 1]))


def neigh_size(lookahead_cost: float, k: int, level_committed: bool, k_min: int, k_max: int) -> int:
    """Shrink the neighbourhood after a committed level, grow it otherwise."""
    if level_committed:
        return int(min(max(k - math.ceil(1 - lookahead_cost / k), k_min), k_max))
    return int(min(k + 1, k_max))


def _subflock_rollout(state: FlockState, accels: np.ndarray) -> list[FlockState]:
    out, s = [], state
    for a in accels:
        s = step(s, a)
        out.append(s)
    return out


def local_ampc(
    state: FlockState,
    fixed: list[np.ndarray | None],
    delta: float,
    h_max: int,
    swarm_scale: int,
    params: FlockParams,
    seed: int,
    *,
    bird_total: int | None = None,
    member_ids: tuple[int, ...] | None = None,
    pso_config: PsoConfig = PsoConfig(),
) -> NeighborhoodSolution:
    """Adaptive-horizon PSO for one subflock with some sequences already fixed.

    ``state`` is the subflock; ``fixed[j]`` is member ``j``'s fixed
    acceleration sequence or ``None``. Fixed entries are constants of the
    rollout; everything up to the current horizon ``h`` that is not fixed is
    searched. The horizon (and the swarm, ``p = 2 * beta * h * B``) grows until
    the subflock cost falls by at least ``delta`` or ``h`` exceeds ``h_max``.
    """
    if delta < 0:
        raise ConfigurationError("delta must be >= 0")
    b = state.bird_count
    if len(fixed) != b:
        raise ConfigurationError("one fixed entry (or None) per member is required")
    member_ids = tuple(range(b)) if member_ids is None else tuple(member_ids)
    B = b if bird_total is None else bird_total
    fixed_len = [0 if f is None else len(f) for f in fixed]

    def build(L, h):
        acc = np.zeros((L, b, 2))
        free = np.zeros((L, b), dtype=bool)
        for j, f in enumerate(fixed):
            if f is not None:
                acc[: len(f), j] = f
            free[fixed_len[j] : h, j] = True
        return acc, free

    def finish(acc):
        states = _subflock_rollout(state, acc)
        return NeighborhoodSolution(member_ids, acc, tuple(states), cost(states[-1], params))

    if all(f is not None for f in fixed):
        acc, _ = build(max(max(fixed_len), 1), 0)
        return finish(acc)

    reference = cost(state, params)
    best = None
    h = 1
    p = 2 * swarm_scale * B
    while h <= h_max:
        L = max(h, max(fixed_len))
        acc0, free = build(L, h)
        nfree = int(free.sum())
        if nfree:
            D = 2 * nfree
            x0, v0 = state.positions, state.velocities

            def objective(z):
                return control.rollout_costs(x0, v0, z, params, free, acc0)

            res = minimize(
                objective,
                -np.ones(D),
                np.ones(D),
                pso_config.with_particles(p),
                derive_seed(seed, h - 1),
                vectorized=True,
                initial_points=np.zeros((1, D)),
            )
            _, _, acc = control.rollout(x0, v0, res.best_point[None, :], params, free, acc0)
            sol = finish(acc[0])
        else:
            sol = finish(acc0)
        if best is None or sol.last_cost < best.last_cost:
            best = sol
        if reference - sol.last_cost >= delta:
            return sol
        h += 1
        p = 2 * swarm_scale * h * B
    return best


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    accelerations: np.ndarray  # (L, B, 2), zero-padded fixed sequences
    first_state: FlockState
    lookahead_state: FlockState
    rounds: int
    winners: tuple[int, ...]
    horizon: int


def _lookahead(state: FlockState, plans: FixedPlans) -> tuple[np.ndarray, list[FlockState]]:
    acc = plans.padded()
    return acc, _subflock_rollout(state, acc)


def consensus_step(
    state: FlockState,
    k: int,
    config: DampcConfig,
    params: FlockParams,
    seed: int,
    *,
    level_index: int = 1,
    pso_config: PsoConfig = PsoConfig(),
    on_round=None,
) -> ConsensusResult:
    """Consensus rounds until every bird has a fixed acceleration sequence."""
    B = state.bird_count
    if not 1 <= k <= B:
        raise ConfigurationError(f"neighbourhood size must lie in [1, {B}]")
    m, t = config.max_steps, level_index
    plans = FixedPlans(B)
    rounds = 0
    winners = []
    while True:
        R = plans.unfixed
        if not R:
            break
        rounds += 1
        if rounds > B:
            raise InternalError("consensus did not terminate within B rounds")
        cache: dict[tuple[int, ...], NeighborhoodSolution] = {}
        proposals = {}
        for i in R:
            members = neighbors(i, k, state)
            if members not in cache:
                sub = state.subset(members)
                delta = cost(sub, params) / (m - t)
                cache[members] = local_ampc(
                    sub,
                    [plans.get(j) for j in members],
                    delta,
                    config.h_max,
                    config.swarm_scale,
                    params,
                    derive_seed(seed, rounds, *members),
                    bird_total=B,
                    member_ids=members,
                    pso_config=pso_config,
                )
            proposals[i] = cache[members]
        winner = min(R, key=lambda i: (proposals[i].last_cost, i))
        sol = proposals[winner]
        for j in sol.member_ids:
            plans.fix(j, sol.sequence(j))
        winners.append(winner)
        if on_round is not None:
            on_round(rounds, list(R), winner)
    acc, states = _lookahead(state, plans)
    return ConsensusResult(acc, states[0], states[-1], rounds, tuple(winners), acc.shape[0])


@dataclass(frozen=True)
class DampcResult:
    trace: PlanTrace
    ledger: LevelLedger

    @property
    def converged(self) -> bool:
        return self.trace.converged


def _run(initial, config, params, seed, pso_config, consensus) -> DampcResult:
    B = initial.bird_count
    errs = config.violations(B)
    if errs:
        raise ConfigurationError("; ".join(errs))
    k_min, k_max = config.bounds(B)
    m = config.max_steps
    level = cost(initial, params)
    if not math.isfinite(level):
        raise ConfigurationError("initial cost must be finite")
    ledger = LevelLedger(levels=[level])
    k = min(max(B, k_min), k_max)
    s = initial
    t = 1
    steps: list[PlanStep] = []
    last = None
    n = 0
    while level > config.threshold and t < m and n < m:
        res = consensus(s, k, t, derive_seed(seed, n))
        J_look = cost(res.lookahead_state, params)
        delta = level / (m - t)
        committed = level - J_look > delta
        if committed:
            level = J_look
            t += 1
            ledger.levels.append(level)
            ledger.thresholds.append(delta)
        ledger.neighborhood_sizes.append(k)
        ledger.rows.append(
            dict(step=n, cost=cost(s, params), level=level, delta=delta, k=k,
                 rounds=res.rounds, horizon=res.horizon, committed=committed)
        )
        s = res.first_state
        steps.append(PlanStep(ActionPlan(res.accelerations[:1]), s, level, delta, res.horizon, 0))
        last = res
        k = neigh_size(J_look, k, committed, k_min, k_max)
        n += 1
    if level <= config.threshold and last is not None:
        # play out the rest of the lookahead plan that certified the last level
        for a in last.accelerations[1:]:
            s = step(s, a)
            steps.append(PlanStep(ActionPlan(a[None]), s, level, 0.0, 1, 0))
    final = cost(s, params)
    trace = PlanTrace(initial, tuple(steps), final, final <= config.threshold, n)
    return DampcResult(trace, ledger)


def run(
    initial: FlockState,
    config: DampcConfig,
    params: FlockParams,
    seed: int,
    *,
    pso_config: PsoConfig = PsoConfig(),
) -> DampcResult:
    """Distributed AMPC from ``initial`` until the level drops below the threshold."""

    def consensus(s, k, t, step_seed):
        return consensus_step(s, k, config, params, step_seed, level_index=t, pso_config=pso_config)

    return _run(initial, config, params, seed, pso_config, consensus)


def centralized_ampc(
    initial: FlockState,
    config: DampcConfig,
    params: FlockParams,
    seed: int,
    *,
    pso_config: PsoConfig = PsoConfig(),
) -> DampcResult:
    """Centralised adaptive-horizon MPC under the same level protocol.

    Each step optimises the whole flock at once with ``local_ampc``; no
    neighbourhoods, no consensus.
    """
    B = initial.bird_count
    everyone = tuple(range(B))

    def consensus(s, k, t, step_seed):
        delta = cost(s, params) / (config.max_steps - t)
        sol = local_ampc(
            s, [None] * B, delta, config.h_max, config.swarm_scale, params,
            derive_seed(step_seed, 1, *everyone), bird_total=B, member_ids=everyone,
            pso_config=pso_config,
        )
        return ConsensusResult(sol.accelerations, sol.states[0], sol.states[-1], 1, (0,), sol.horizon)

    return _run(initial, config, params, seed, pso_config, consensus)
