"""Monte-Carlo success estimation with an additive (epsilon, delta) guarantee.

With ``N >= 4 ln(2/delta) / epsilon**2`` i.i.d. Bernoulli runs the sample mean
lies within ``epsilon`` of the true success probability with confidence
``1 - delta``.

Run ``n`` of a batch with master seed ``s`` uses seed ``derive_seed(s, n)``
(splitmix64 chaining, see ``seeding``), so any single run can be replayed on
its own.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .errors import ConfigurationError, InternalError
from .flock import format_float
from .seeding import derive_seed

WORKERS_ENV = "VFORMATION_WORKERS"


def required_samples(epsilon: float, delta: float) -> int:
    """Smallest ``N`` with ``N >= 4 ln(2/delta) / epsilon**2``."""
    if not (0 < epsilon <= 1):
        raise ConfigurationError("epsilon must lie in (0, 1]")
    if not (0 < delta < 1):
        raise ConfigurationError("delta must lie in (0, 1)")
    return math.ceil(4 * math.log(2 / delta) / epsilon**2)


@dataclass(frozen=True)
class SmcPlan:
    epsilon: float = 0.1
    delta: float = 0.01
    sample_count: int | None = None

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))
        if self.sample_count is None:
            object.__setattr__(self, "sample_count", required_samples(self.epsilon, self.delta))

    def violations(self) -> list[str]:
        errs = []
        if not 0 < self.epsilon <= 1:
            errs.append("epsilon must lie in (0, 1]")
        if not 0 < self.delta < 1:
            errs.append("delta must lie in (0, 1)")
        if self.sample_count is not None and self.sample_count < 1:
            errs.append("sample_count must be >= 1")
        return errs

    @property
    def guaranteed(self) -> bool:
        """Whether ``sample_count`` meets the bound for ``(epsilon, delta)``."""
        return self.sample_count >= required_samples(self.epsilon, self.delta)


@dataclass(frozen=True)
class RunRecord:
    index: int
    seed: int
    converged: bool
    duration: float = math.nan
    avg_horizon: float = math.nan
    avg_neighborhood: float = math.nan


@dataclass(frozen=True)
class RunOutcome:
    """What an experiment reports for one seeded run."""

    converged: bool
    duration: float = math.nan
    avg_horizon: float = math.nan
    avg_neighborhood: float = math.nan


class BatchAborted(InternalError):
    def __init__(self, message: str, seed: int, index: int):
        super().__init__(message)
        self.seed = seed
        self.index = index


@dataclass
class RunStats:
    successes: int
    runs: int
    epsilon: float
    delta: float
    records: list[RunRecord] = field(default_factory=list)

    @property
    def estimate(self) -> float:
        return self.successes / self.runs if self.runs else math.nan

    def _mean_over_successes(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.records if r.converged]
        vals = [v for v in vals if not math.isnan(v)]
        return math.fsum(vals) / len(vals) if vals else math.nan

    @property
    def avg_duration(self) -> float:
        return self._mean_over_successes("duration")

    @property
    def avg_horizon(self) -> float:
        return self._mean_over_successes("avg_horizon")

    @property
    def avg_neighborhood(self) -> float:
        return self._mean_over_successes("avg_neighborhood")

    def summary(self, **extra) -> dict:
        out = {
            "runs": self.runs,
            "successes": self.successes,
            "estimate": self.estimate,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "avg_duration": self.avg_duration,
            "avg_horizon": self.avg_horizon,
            "avg_neighborhood": self.avg_neighborhood,
        }
        out.update(extra)
        return out


def _json_value(v):
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return v
    if isinstance(v, float):
        # 17 significant digits; NaN as null to stay valid JSON
        return None if math.isnan(v) else float(format_float(v))
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return str(v)


def summary_json(summary: dict) -> str:
    return json.dumps(_json_value(summary), indent=2, sort_keys=True) + "\n"


RUN_COLUMNS = ("index", "seed", "converged", "duration", "avg_horizon", "avg_neighborhood")


def records_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for r in records:
        w.writerow([
            r.index, r.seed, int(r.converged),
            *(format_float(getattr(r, c)) for c in RUN_COLUMNS[3:]),
        ])
    return buf.getvalue()


def _coerce(result) -> RunOutcome:
    if isinstance(result, RunOutcome):
        return result
    if isinstance(result, (bool, int)):
        return RunOutcome(bool(result))
    raise InternalError(f"experiment returned {type(result).__name__}, expected RunOutcome or bool")


def _one(experiment, index: int, seed: int) -> RunRecord:
    try:
        out = _coerce(experiment(seed))
    except ConfigurationError:
        raise
    except Exception as exc:
        raise BatchAborted(f"run {index} (seed {seed}) failed: {exc}", seed, index) from exc
    return RunRecord(index, seed, out.converged, out.duration, out.avg_horizon, out.avg_neighborhood)


def _worker_count(workers: int | None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigurationError("worker count must be >= 1")
    return workers


def estimate(
    experiment: Callable[[int], RunOutcome | bool],
    plan: SmcPlan,
    master_seed: int,
    *,
    workers: int | None = None,
) -> RunStats:
    """Run ``plan.sample_count`` seeded experiments and aggregate them.

    ``workers`` > 1 (or the ``VFORMATION_WORKERS`` environment variable)
    spreads runs over processes; the experiment must then be picklable.
    Records are kept in run order, so results do not depend on scheduling.
    """
    N = plan.sample_count
    seeds = [derive_seed(master_seed, n) for n in range(N)]
    n_workers = _worker_count(workers)
    if n_workers == 1:
        records = [_one(experiment, n, s) for n, s in enumerate(seeds)]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_one, experiment, n, s) for n, s in enumerate(seeds)]
            records = [f.result() for f in futures]
    successes = sum(r.converged for r in records)
    return RunStats(successes, N, plan.epsilon, plan.delta, records)
