"""Flock dynamics and the V-formation fitness metrics.

A flock of ``B`` birds lives in the plane. Each bird has a position and a
velocity; a control step adds the velocity (plus an optional displacement)
to the position and an acceleration to the velocity.

The fitness of a configuration combines three metrics:

* clear view (CV): fraction of each bird's view cone hidden by other wings,
* velocity matching (VM): normalised pairwise velocity differences,
* upwash benefit (UB): lift received from the wingtip vortices of birds ahead.

A perfect V has ``CV = 0``, ``VM = 0`` and ``UB = 1`` (only the leader flies
without upwash), and the cost is the squared distance to that optimum.

All metric kernels (``_cv_terms``, ``_vm``, ``_ub_terms``, ``batch_cost``)
accept arbitrary leading batch dimensions so that a whole particle swarm can
be scored in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.special import erf

from .errors import ConfigurationError, DegenerateGeometryError, DomainError, SamplingError

Array = NDArray[np.float64]

CV_OPT = 0.0
VM_OPT = 0.0
UB_OPT = 1.0


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FlockParams:
    """Physical and metric constants.

    ``upwash_mean`` defaults to ``((12 + pi) w / 16, 1)``, the offset behind a
    bird at which upwash peaks. ``upwash_cov`` is the covariance of the upwash
    Gaussian. ``view_angle`` is the full opening angle of the view cone.
    """

    bird_count: int = 7
    view_angle: float = math.pi / 4
    wing_span: float = 1.0
    v_max: float = 1.5
    accel_ratio: float = 0.9
    upwash_scale: float = 1.0
    upwash_mean: tuple[float, float] | None = None
    upwash_cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    min_distance: float = 0.3

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ConfigurationError("; ".join(errors))
        if self.upwash_mean is None:
            object.__setattr__(self, "upwash_mean", ((12 + math.pi) * self.wing_span / 16, 1.0))
        object.__setattr__(self, "upwash_mean", tuple(float(c) for c in self.upwash_mean))
        object.__setattr__(
            self, "upwash_cov", tuple(tuple(float(c) for c in row) for row in self.upwash_cov)
        )

    def violations(self) -> list[str]:
        errs = []
        if int(self.bird_count) != self.bird_count or self.bird_count < 1:
            errs.append("bird_count must be a positive integer")
        if not 0 < self.view_angle <= 2 * math.pi:
            errs.append("view_angle must lie in (0, 2*pi]")
        if not self.wing_span > 0:
            errs.append("wing_span must be > 0")
        if not self.v_max > 0:
            errs.append("v_max must be > 0")
        if not 0 < self.accel_ratio < 1:
            errs.append("accel_ratio must lie in (0, 1)")
        if not self.min_distance >= 0:
            errs.append("min_distance must be >= 0")
        if self.upwash_mean is not None and len(self.upwash_mean) != 2:
            errs.append("upwash_mean must be a 2-vector")
        cov = np.asarray(self.upwash_cov, dtype=float)
        if cov.shape != (2, 2):
            errs.append("upwash_cov must be a 2x2 matrix")
        elif not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            errs.append("upwash_cov must be symmetric positive-definite")
        return errs

    @property
    def upwash_threshold(self) -> float:
        """Lateral offset ``(4 - pi) w / 8`` separating downwash from upwash."""
        return (4 - math.pi) * self.wing_span / 8

    @property
    def upwash_precision(self) -> Array:
        return np.linalg.inv(np.asarray(self.upwash_cov, dtype=float))

    def with_birds(self, bird_count: int) -> "FlockParams":
        return _replace(self, bird_count=bird_count)


def _replace(params: FlockParams, **changes) -> FlockParams:
    from dataclasses import replace

    return replace(params, **changes)


@dataclass(frozen=True, eq=False)
class FlockState:
    """Positions and velocities of every bird, plus a removal mask.

    Removed birds are carried along unchanged and never enter a metric.
    """

    positions: Array
    velocities: Array
    removed: NDArray[np.bool_] = field(default=None)

    def __post_init__(self):
        x = _frozen(self.positions)
        v = _frozen(self.velocities)
        if x.ndim != 2 or x.shape[1] != 2 or x.shape != v.shape:
            raise ConfigurationError(
                f"positions {x.shape} and velocities {v.shape} must both be B x 2"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ConfigurationError("flock state entries must be finite")
        removed = np.zeros(len(x), bool) if self.removed is None else self.removed
        removed = _frozen(removed, bool)
        if removed.shape != (len(x),):
            raise ConfigurationError("removal mask must have one entry per bird")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "removed", removed)

    @property
    def bird_count(self) -> int:
        return len(self.positions)

    @property
    def present(self) -> NDArray[np.bool_]:
        return ~self.removed

    def active(self) -> tuple[Array, Array]:
        """Positions and velocities of the birds still in the flock."""
        keep = self.present
        return self.positions[keep], self.velocities[keep]

    def subset(self, indices) -> "FlockState":
        idx = np.asarray(indices, dtype=int)
        return FlockState(self.positions[idx], self.velocities[idx], self.removed[idx])

    def __eq__(self, other):
        if not isinstance(other, FlockState):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
            and np.array_equal(self.removed, other.removed)
        )

    def __hash__(self):
        return hash((self.positions.tobytes(), self.velocities.tobytes(), self.removed.tobytes()))

    def to_record(self) -> str:
        """Flat text record: ``B`` then one ``x1 x2 v1 v2`` row per bird."""
        rows = [str(self.bird_count)]
        for xi, vi in zip(self.positions, self.velocities):
            rows.append(" ".join(format_float(c) for c in (*xi, *vi)))
        return "\n".join(rows)

    @classmethod
    def from_record(cls, text: str) -> "FlockState":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        count = int(lines[0])
        rows = np.array([[float(c) for c in ln.split()] for ln in lines[1 : count + 1]])
        if rows.shape != (count, 4):
            raise ConfigurationError(f"expected {count} rows of 4 numbers")
        return cls(rows[:, :2], rows[:, 2:])


def format_float(value: float) -> str:
    return f"{float(value):.17g}"


@dataclass(frozen=True, eq=False)
class ActionPlan:
    """Accelerations for every bird over ``horizon`` steps, shape ``(h, B, 2)``."""

    accelerations: Array

    def __post_init__(self):
        a = _frozen(self.accelerations)
        if a.ndim != 3 or a.shape[2] != 2 or a.shape[0] < 1:
            raise ConfigurationError(f"accelerations must be h x B x 2, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ConfigurationError("accelerations must be finite")
        object.__setattr__(self, "accelerations", a)

    @property
    def horizon(self) -> int:
        return self.accelerations.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ActionPlan):
            return NotImplemented
        return np.array_equal(self.accelerations, other.accelerations)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Disturbance:
    """Attacker input: per-bird displacements and a removal mask."""

    displacements: Array
    removed: NDArray[np.bool_] = field(default=None)

    def __post_init__(self):
        d = _frozen(self.displacements)
        if d.ndim != 2 or d.shape[1] != 2:
            raise ConfigurationError("displacements must be B x 2")
        removed = np.zeros(len(d), bool) if self.removed is None else self.removed
        object.__setattr__(self, "displacements", d)
        object.__setattr__(self, "removed", _frozen(removed, bool))

    @classmethod
    def none(cls, bird_count: int) -> "Disturbance":
        return cls(np.zeros((bird_count, 2)))

    @property
    def is_zero(self) -> bool:
        return not self.removed.any() and not self.displacements.any()


# ---------------------------------------------------------------------------
# dynamics


def step(
    state: FlockState,
    accel,
    dist: Disturbance | None = None,
    params: FlockParams | None = None,
) -> FlockState:
    """Advance one time step: ``x' = x + v + d`` and ``v' = v + a``."""
    a = np.asarray(accel, dtype=float)
    B = state.bird_count
    if params is not None and params.bird_count != B:
        raise ConfigurationError(f"state has {B} birds, params expect {params.bird_count}")
    if a.shape != (B, 2):
        raise ConfigurationError(f"acceleration must be {B} x 2, got {a.shape}")
    if dist is None:
        x_new = state.positions + state.velocities
        removed = state.removed
    else:
        if dist.displacements.shape != (B, 2):
            raise ConfigurationError(f"disturbance must be {B} x 2")
        removed = state.removed | dist.removed
        d = np.where(removed[:, None], 0.0, dist.displacements)
        x_new = state.positions + state.velocities + d
    v_new = state.velocities + a
    x_new = np.where(removed[:, None], state.positions, x_new)
    v_new = np.where(removed[:, None], state.velocities, v_new)
    return FlockState(x_new, v_new, removed)


# ---------------------------------------------------------------------------
# batched metric kernels: x, v have shape (..., B, 2)


def _speeds(v: Array) -> Array:
    s = np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)
    if np.any(s == 0):
        raise DomainError("a bird has zero speed; heading is undefined")
    return s


def _check_distinct(x: Array) -> None:
    B = x.shape[-2]
    if B < 2:
        return
    diff = x[..., :, None, :] - x[..., None, :, :]
    d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    d2 = d2 + np.eye(B)
    if np.any(d2 == 0):
        raise DegenerateGeometryError("two birds share a position")


def _cv_terms(x: Array, v: Array, params: FlockParams, speed: Array | None = None) -> Array:
    """Per-bird clear-view fraction, shape ``(..., B)``."""
    B = x.shape[-2]
    if B < 2:
        return np.zeros(x.shape[:-1])
    _check_distinct(x)
    speed = _speeds(v) if speed is None else speed
    u = v / speed[..., None]
    n = np.stack([-u[..., 1], u[..., 0]], axis=-1)
    rel = x[..., None, :, :] - x[..., :, None, :]  # rel[..., i, j] = x_j - x_i
    half = 0.5 * params.wing_span * n[..., None, :, :]
    ux = u[..., :, None, 0]
    uy = u[..., :, None, 1]

    def angle(e):
        return np.arctan2(ux * e[..., 1] - uy * e[..., 0], ux * e[..., 0] + uy * e[..., 1])

    a1 = angle(rel + half)
    a2 = angle(rel - half)
    lo = np.minimum(a1, a2)
    hi = np.maximum(a1, a2)
    wrap = (hi - lo) > math.pi
    c = 0.5 * params.view_angle

    s1 = np.where(wrap, np.maximum(hi, -c), np.maximum(lo, -c))
    e1 = np.where(wrap, c, np.minimum(hi, c))
    s2 = np.where(wrap, -c, c)
    e2 = np.where(wrap, np.minimum(lo, c), c)
    e1 = np.maximum(e1, s1)
    e2 = np.maximum(e2, s2)
    eye = np.eye(B, dtype=bool)
    s1 = np.where(eye, c, s1)
    e1 = np.where(eye, c, e1)

    starts = np.concatenate([s1, s2], axis=-1)
    ends = np.concatenate([e1, e2], axis=-1)
    order = np.argsort(starts, axis=-1, kind="stable")
    starts = np.take_along_axis(starts, order, axis=-1)
    ends = np.take_along_axis(ends, order, axis=-1)
    reach = np.maximum.accumulate(ends, axis=-1)
    prev = np.concatenate([np.full(reach.shape[:-1] + (1,), -c), reach[..., :-1]], axis=-1)
    covered = np.maximum(ends - np.maximum(starts, prev), 0.0).sum(axis=-1)
    return covered / params.view_angle


def _vm(v: Array, speed: Array | None = None) -> Array:
    speed = _speeds(v) if speed is None else speed
    total = np.zeros(v.shape[:-2])
    # sequential over pairs (i > j) so the sum is order-stable
    for i in range(v.shape[-2]):
        for j in range(i):
            dx = v[..., i, 0] - v[..., j, 0]
            dy = v[..., i, 1] - v[..., j, 1]
            r = np.sqrt(dx * dx + dy * dy) / (speed[..., i] + speed[..., j])
            total = total + r * r
    return total


def _ub_pairs(x: Array, v: Array, params: FlockParams, speed: Array | None = None) -> Array:
    """Upwash ``UB_ij`` received by bird ``i`` from bird ``j``, shape ``(..., B, B)``."""
    B = x.shape[-2]
    speed = _speeds(v) if speed is None else speed
    u = v / speed[..., None]
    rel = x[..., None, :, :] - x[..., :, None, :]
    ux = u[..., :, None, 0]
    uy = u[..., :, None, 1]
    g = ux * rel[..., 0] + uy * rel[..., 1]
    h = ux * rel[..., 1] - uy * rel[..., 0]
    ah = np.abs(h)
    t = params.upwash_threshold
    smooth = erf(2 * math.sqrt(2) * (ah - t))
    mu = params.upwash_mean
    P = params.upwash_precision
    z0 = ah - mu[0]
    z1 = np.abs(g) - mu[1]
    q = P[0, 0] * z0 * z0 + (P[0, 1] + P[1, 0]) * z0 * z1 + P[1, 1] * z1 * z1
    gauss = np.exp(-0.5 * q)
    ub = smooth * gauss
    if params.upwash_scale != 1.0:
        ub = np.where(ah >= t, params.upwash_scale * ub, ub)
    ub = np.where(g > 0, ub, 0.0)
    return np.where(np.eye(B, dtype=bool), 0.0, ub)


def _ub_terms(x: Array, v: Array, params: FlockParams, speed: Array | None = None) -> Array:
    """Per-bird cost terms ``1 - min(UB_i, 1)``, shape ``(..., B)``."""
    total = _ub_pairs(x, v, params, speed).sum(axis=-1)
    return 1.0 - np.minimum(total, 1.0)


def batch_cost(x: Array, v: Array, params: FlockParams) -> Array:
    """Cost of every configuration in a batch; ``x``, ``v`` are ``(..., B, 2)``."""
    from . import _kernels

    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    lead = x.shape[:-2]
    B = x.shape[-2]
    xf = np.ascontiguousarray(np.broadcast_to(x, lead + (B, 2)).reshape(-1, B, 2))
    vf = np.ascontiguousarray(np.broadcast_to(v, lead + (B, 2)).reshape(-1, B, 2))
    out, status = _kernels.batch_cost(xf, vf, *_kernels.params_tuple(params))
    if status == _kernels.ZERO_SPEED:
        raise DomainError("a bird has zero speed; heading is undefined")
    if status == _kernels.COINCIDENT:
        raise DegenerateGeometryError("two birds share a position")
    return out.reshape(lead)


def batch_cost_reference(x: Array, v: Array, params: FlockParams) -> Array:
    """Array-expression version of ``batch_cost`` (slower, kept for cross-checks)."""
    speed = _speeds(v)
    cv = _cv_terms(x, v, params, speed).sum(axis=-1)
    vm = _vm(v, speed)
    ub = _ub_terms(x, v, params, speed).sum(axis=-1)
    return (cv - CV_OPT) ** 2 + (vm - VM_OPT) ** 2 + (ub - UB_OPT) ** 2


# ---------------------------------------------------------------------------
# public metric API on FlockState


def clear_view(state: FlockState, params: FlockParams) -> float:
    x, v = state.active()
    return float(_cv_terms(x, v, params).sum())


def velocity_matching(state: FlockState) -> float:
    _, v = state.active()
    return float(_vm(v))


def upwash_benefit(state: FlockState, params: FlockParams) -> float:
    x, v = state.active()
    return float(_ub_terms(x, v, params).sum())


def cost(state: FlockState, params: FlockParams) -> float:
    """Squared distance of (CV, VM, UB) from the V-formation optimum (0, 0, 1)."""
    x, v = state.active()
    return float(batch_cost(x, v, params))


def rollout_cost(state: FlockState, plan: ActionPlan, params: FlockParams) -> float:
    """Cost after applying every acceleration of ``plan`` without disturbance."""
    if plan.accelerations.shape[1] != state.bird_count:
        raise ConfigurationError("plan and state disagree on the number of birds")
    s = state
    for a in plan.accelerations:
        s = step(s, a)
    return cost(s, params)


def rollout_states(state: FlockState, plan: ActionPlan) -> list[FlockState]:
    out = []
    s = state
    for a in plan.accelerations:
        s = step(s, a)
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# initial configurations


@dataclass(frozen=True)
class InitBounds:
    position: tuple[float, float] = (0.0, 3.0)
    velocity: tuple[float, float] = (0.25, 0.75)

    def __post_init__(self):
        for name in ("position", "velocity"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigurationError(f"{name} bounds must satisfy lower < upper")


def sample_initial(
    seed: int,
    params: FlockParams,
    bounds: InitBounds = InitBounds(),
    max_attempts: int = 10_000,
) -> FlockState:
    """Uniform random flock whose pairwise distances all exceed ``min_distance``."""
    rng = np.random.default_rng(seed)
    B = params.bird_count
    iu = np.triu_indices(B, 1)
    for _ in range(max_attempts):
        x = rng.uniform(*bounds.position, size=(B, 2))
        v = rng.uniform(*bounds.velocity, size=(B, 2))
        diff = x[:, None, :] - x[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))[iu]
        if dist.size == 0 or dist.min() > params.min_distance:
            return FlockState(x, v)
    raise SamplingError(f"no collision-free flock found in {max_attempts} attempts")
