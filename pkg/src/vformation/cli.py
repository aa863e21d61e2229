"""Command-line driver: run a planner, a game or a batch and write its files.

Usage::

    vformation MODE [--config FILE] [--seed N] [--out DIR] [--runs N]

MODE is one of ``ares``, ``dampc``, ``game-brg``, ``game-rdg``,
``game-ampc`` or ``smc-batch``. Each invocation writes to ``--out``:

``trajectory.txt``
    the first run, step by step, replayable through ``flock.step``;
``ledger.csv``
    level / threshold bookkeeping of the first run;
``runs.csv``
    one row per run;
``summary.json``
    aggregate success rate and averages.

Set ``VFORMATION_WORKERS`` to spread runs over several processes.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ares, dampc, games
from .config import MODES, ConfigErrors, ExperimentConfig, emit, load, validate_config
from .errors import ConfigurationError, VFormationError
from .flock import Disturbance, FlockState, cost, format_float, sample_initial, step
from .formation import pinned_v, v_formation
from .seeding import derive_seed
from .smc import RunOutcome, SmcPlan, estimate, records_csv, summary_json

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTERNAL = 3


# ---------------------------------------------------------------------------
# trajectory files


@dataclass(frozen=True)
class TrajectoryStep:
    index: int
    level: float
    horizon: int
    state: FlockState
    accel: np.ndarray  # acceleration applied to reach ``state``
    disturbance: np.ndarray


@dataclass(frozen=True)
class TrajectoryFile:
    bird_count: int
    digest: str
    seed: int
    mode: str
    steps: tuple[TrajectoryStep, ...]
    run_seed: int = 0

    def to_text(self) -> str:
        lines = [
            "# vformation trajectory",
            f"birds {self.bird_count}",
            f"digest {self.digest}",
            f"seed {self.seed}",
            f"run_seed {self.run_seed}",
            f"mode {self.mode}",
            "# per bird: x1 x2 v1 v2 a1 a2 d1 d2 removed",
        ]
        for st in self.steps:
            lines.append(f"step {st.index} level {format_float(st.level)} horizon {st.horizon}")
            for i in range(self.bird_count):
                nums = (*st.state.positions[i], *st.state.velocities[i], *st.accel[i], *st.disturbance[i])
                lines.append(" ".join(format_float(c) for c in nums) + f" {int(st.state.removed[i])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrajectoryFile":
        header = {}
        steps = []
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        pos = 0
        while pos < len(lines) and not lines[pos].startswith("step "):
            key, _, value = lines[pos].partition(" ")
            header[key] = value.strip()
            pos += 1
        try:
            B = int(header["birds"])
            while pos < len(lines):
                parts = lines[pos].split()
                idx, level, horizon = int(parts[1]), float(parts[3]), int(parts[5])
                rows = np.array([[float(c) for c in ln.split()] for ln in lines[pos + 1 : pos + 1 + B]])
                if rows.shape != (B, 9):
                    raise ValueError(f"step {idx}: expected {B} rows of 9 numbers")
                state = FlockState(rows[:, 0:2], rows[:, 2:4], rows[:, 8] != 0)
                steps.append(TrajectoryStep(idx, level, horizon, state, rows[:, 4:6], rows[:, 6:8]))
                pos += 1 + B
            return cls(
                B, header["digest"], int(header["seed"]), header["mode"], tuple(steps),
                int(header.get("run_seed", 0)),
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigurationError(f"malformed trajectory file: {exc}") from exc

    def replay_error(self) -> float:
        """Largest coordinate gap between recorded states and a fresh replay."""
        if not self.steps:
            return 0.0
        s = self.steps[0].state
        worst = 0.0
        for st in self.steps[1:]:
            d = Disturbance(st.disturbance, st.state.removed)
            s = step(s, st.accel, d)
            worst = max(
                worst,
                float(np.max(np.abs(s.positions - st.state.positions))),
                float(np.max(np.abs(s.velocities - st.state.velocities))),
            )
            s = st.state
        return worst


def _trajectory(mode, config, seed, initial, elementary) -> TrajectoryFile:
    """``elementary`` yields ``(state, accel, disturbance, level, horizon)`` per step."""
    B = initial.bird_count
    zero = np.zeros((B, 2))
    steps = [TrajectoryStep(0, cost(initial, config.flock), 0, initial, zero, zero)]
    for n, (s, a, d, level, h) in enumerate(elementary, start=1):
        steps.append(TrajectoryStep(n, level, h, s, np.asarray(a), np.asarray(d)))
    return TrajectoryFile(B, config.digest(), config.seed, mode, tuple(steps), seed)


# ---------------------------------------------------------------------------
# single runs


@dataclass(frozen=True)
class RunArtifacts:
    outcome: RunOutcome
    trajectory: TrajectoryFile
    ledger_csv: str
    raw: object = None  # PlanTrace, DampcResult or GameOutcome


def _game_initial(config: ExperimentConfig) -> FlockState:
    B = config.flock.bird_count
    try:
        return pinned_v(B)
    except ConfigurationError:
        return v_formation(B, config.flock)


def _attacker(config: ExperimentConfig, mode: str):
    if mode == "game-brg":
        birds = config.experiment.removed_birds or None
        return games.BirdRemoval(birds)
    if mode == "game-rdg":
        return games.RandomDisplacement()
    return games.AmpcAttack(pso_config=config.pso)


def scenario_label(config: ExperimentConfig, mode: str) -> str:
    g = config.game
    if mode == "game-brg":
        birds = config.experiment.removed_birds
        if birds:
            noun = "bird" if len(birds) == 1 else "birds"
            return f"brg {noun} {','.join(str(b) for b in birds)}"
        return f"brg random R={g.attacked_count}"
    kind = "rdg" if mode == "game-rdg" else "ampc"
    return f"{kind} R={g.attacked_count} M={format_float(g.magnitude_bound)}"


def _csv(header, rows) -> str:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(format_float(v) if isinstance(v, float) else str(v) for v in r))
    return "\n".join(out) + "\n"


def execute(config: ExperimentConfig, mode: str, seed: int) -> RunArtifacts:
    """One seeded run of ``mode``."""
    params = config.flock
    if mode == "ares":
        initial = sample_initial(derive_seed(seed, 0), params, config.init)
        trace = ares.synthesize(initial, config.ares, config.pso, params, derive_seed(seed, 1))
        elementary = []
        s = initial
        for st in trace.steps:
            for a in st.action.accelerations:
                s = step(s, a)
                elementary.append((s, a, np.zeros_like(a), st.level, st.horizon))
        ledger = _csv(
            ("level_index", "level", "delta", "horizon", "particles"),
            [(i + 1, st.level, st.delta, st.horizon, st.particles) for i, st in enumerate(trace.steps)],
        )
        outcome = RunOutcome(trace.converged, float(trace.duration), trace.mean_horizon)
        return RunArtifacts(outcome, _trajectory(mode, config, seed, initial, elementary), ledger, trace)
    if mode == "dampc":
        initial = sample_initial(derive_seed(seed, 0), params, config.init)
        res = dampc.run(initial, config.dampc, params, derive_seed(seed, 1), pso_config=config.pso)
        elementary = [
            (st.state, st.action.accelerations[0], np.zeros((initial.bird_count, 2)), st.level, st.horizon)
            for st in res.trace.steps
        ]
        rows = res.ledger.rows
        mean_h = float(np.mean([r["horizon"] for r in rows])) if rows else math.nan
        outcome = RunOutcome(
            res.converged, float(len(res.trace.steps)), mean_h, res.ledger.mean_neighborhood
        )
        return RunArtifacts(
            outcome, _trajectory(mode, config, seed, initial, elementary), res.ledger.to_csv(), res
        )
    if mode in ("game-brg", "game-rdg", "game-ampc"):
        initial = _game_initial(config)
        out = games.play(initial, _attacker(config, mode), config.game, params, seed, pso_config=config.pso)
        elementary = [
            (st.state, st.action.accelerations[0], d.displacements, st.level, st.horizon)
            for st, d in zip(out.trace.steps, out.disturbances)
        ]
        ledger = _csv(
            ("step", "cost_before", "cost_after", "horizon"),
            [(n + 1, st.level, cost(st.state, params), st.horizon) for n, st in enumerate(out.trace.steps)],
        )
        outcome = RunOutcome(out.controller_won, float(out.convergence_duration), out.avg_horizon)
        return RunArtifacts(outcome, _trajectory(mode, config, seed, initial, elementary), ledger, out)
    raise ConfigurationError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class _Experiment:
    """Picklable ``seed -> RunOutcome`` wrapper for batch runs."""

    config: ExperimentConfig
    mode: str

    def __call__(self, seed: int) -> RunOutcome:
        return execute(self.config, self.mode, seed).outcome


# ---------------------------------------------------------------------------
# orchestration


def run_experiment(config: ExperimentConfig, out_dir, *, workers: int | None = None) -> int:
    """Run ``config`` and write its output files; returns the exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = config.run_mode
    plan = config.smc if config.mode == "smc-batch" else SmcPlan(
        config.smc.epsilon, config.smc.delta, config.experiment.runs
    )
    stats = estimate(_Experiment(config, mode), plan, config.seed, workers=workers)
    first = execute(config, mode, stats.records[0].seed)
    digest = config.digest()
    stamp = f"# seed={config.seed} digest={digest}\n"
    (out / "trajectory.txt").write_text(first.trajectory.to_text())
    (out / "ledger.csv").write_text(stamp + first.ledger_csv)
    (out / "runs.csv").write_text(stamp + records_csv(stats.records))
    extra = {"mode": config.mode, "run_mode": mode, "seed": config.seed, "digest": digest}
    if mode.startswith("game-"):
        extra["scenario"] = scenario_label(config, mode)
    if config.mode == "smc-batch":
        extra["guaranteed"] = plan.guaranteed
    (out / "summary.json").write_text(summary_json(stats.summary(**extra)))
    (out / "config.ini").write_text(stamp + emit(config))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vformation", description="V-formation planners and games.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--seed", type=int, help="master seed (overrides the file)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--runs", type=int, help="number of runs (overrides the file)")
    return p


def resolve_config(args) -> ExperimentConfig:
    config = load(args.config) if args.config else validate_config("")
    exp = dataclasses.replace(config.experiment, mode=args.mode)
    if args.seed is not None:
        exp = dataclasses.replace(exp, seed=args.seed)
    smc = config.smc
    if args.runs is not None:
        exp = dataclasses.replace(exp, runs=args.runs)
        smc = SmcPlan(smc.epsilon, smc.delta, args.runs)
    # re-validate the merged settings through the text round trip
    return validate_config(emit(config.replace(experiment=exp, smc=smc)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return run_experiment(config, args.out)
    except ConfigErrors as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VFormationError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
