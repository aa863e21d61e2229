"""Particle swarm optimisation over a box.

Classic PSO in which every particle follows its own best point and the best
point of a random neighbourhood of the swarm::

    v <- w*v + y1*u1*(x_personal - x) + y2*u2*(x_neighbour - x)
    x <- clip(x + v, lower, upper)

``minimize_many`` runs several independent swarms in lock step so their
objective evaluations can be vectorised together. Each swarm draws from its
own generator, in a fixed order, so a swarm's trajectory does not depend on
which other swarms share the batch: ``minimize_many(..., seeds=[s])`` and
``minimize(..., seed=s)`` agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, OptimizationError


@dataclass(frozen=True)
class PsoConfig:
    particle_count: int = 20
    inertia: float = 0.729
    self_adjust: float = 1.49
    social_adjust: float = 1.49
    max_iterations: int = 60
    neighborhood_fraction: float = 0.25
    stall_tolerance: float = 1e-7
    stall_iterations: int = 15

    def __post_init__(self):
        errs = self.violations()
        if errs:
            raise ConfigurationError("; ".join(errs))

    def violations(self) -> list[str]:
        errs = []
        if self.particle_count < 2:
            errs.append("particle_count must be >= 2")
        if self.max_iterations < 1:
            errs.append("max_iterations must be >= 1")
        if not 0 < self.neighborhood_fraction <= 1:
            errs.append("neighborhood_fraction must lie in (0, 1]")
        if self.stall_tolerance < 0:
            errs.append("stall_tolerance must be >= 0")
        if self.stall_iterations < 1:
            errs.append("stall_iterations must be >= 1")
        return errs

    @property
    def neighborhood_size(self) -> int:
        p = self.particle_count
        return min(p, max(2, math.ceil(self.neighborhood_fraction * p)))

    def with_particles(self, p: int) -> "PsoConfig":
        from dataclasses import replace

        return replace(self, particle_count=int(p))


@dataclass(frozen=True)
class PsoResult:
    best_point: np.ndarray
    best_value: float
    iterations_used: int


# (swarm index, iteration, global best value, personal best values)
TraceHook = Callable[[int, int, float, np.ndarray], None]


def _draw_neighbors(rng: np.random.Generator, p: int, size: int) -> np.ndarray:
    # indices of the `size` smallest uniform keys: a uniform random subset per row
    keys = rng.random((p, p))
    if size >= p:
        return np.argsort(keys, axis=1)
    return np.argpartition(keys, size - 1, axis=1)[:, :size]


def _check_finite(values, points, which):
    bad = ~np.isfinite(values)
    if bad.any():
        k, j = np.argwhere(bad)[0]
        raise OptimizationError(
            f"objective returned {values[k, j]!r} in swarm {which[k]}", point=points[k, j].copy()
        )


def minimize_many(
    objective: Callable[[np.ndarray, np.ndarray], np.ndarray],
    lower,
    upper,
    config: PsoConfig,
    seeds: Sequence[int],
    *,
    initial_points=None,
    trace: TraceHook | None = None,
) -> list[PsoResult]:
    """Run ``len(seeds)`` independent swarms on a shared box.

    ``objective(points, which)`` receives points of shape ``(k, p, D)`` for the
    swarms listed in the integer array ``which`` and returns values ``(k, p)``.
    ``initial_points`` (``(m, D)``, ``m <= p``) replace the first ``m``
    uniformly drawn particles of every swarm.
    """
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    if lo.shape != hi.shape or not np.all(lo < hi):
        raise ConfigurationError("PSO box requires lower < upper elementwise")
    K = len(seeds)
    p, D = config.particle_count, lo.size
    size = config.neighborhood_size
    span = hi - lo
    rngs = [np.random.default_rng(s) for s in seeds]

    pos = np.empty((K, p, D))
    vel = np.empty((K, p, D))
    nbrs = np.empty((K, p, size), dtype=int)
    for k, rng in enumerate(rngs):
        pos[k] = lo + rng.random((p, D)) * span
        vel[k] = rng.uniform(-1.0, 1.0, (p, D)) * span
        nbrs[k] = _draw_neighbors(rng, p, size)
    if initial_points is not None:
        init = np.atleast_2d(np.asarray(initial_points, dtype=float))
        m = min(len(init), p)
        pos[:, :m] = np.clip(init[:m], lo, hi)

    all_k = np.arange(K)
    f = np.asarray(objective(pos, all_k), dtype=float).reshape(K, p)
    _check_finite(f, pos, all_k)
    pbest = pos.copy()
    pbest_f = f.copy()
    gidx = np.argmin(pbest_f, axis=1)
    history = [pbest_f[all_k, gidx].copy()]
    active = np.ones(K, dtype=bool)
    used = np.zeros(K, dtype=int)
    w, y1, y2 = config.inertia, config.self_adjust, config.social_adjust
    rows = np.arange(p)

    for it in range(1, config.max_iterations + 1):
        which = np.flatnonzero(active)
        if which.size == 0:
            break
        u1 = np.empty((which.size, p, D))
        u2 = np.empty((which.size, p, D))
        for n, k in enumerate(which):
            u1[n] = rngs[k].random((p, D))
            u2[n] = rngs[k].random((p, D))

        pf = pbest_f[which]
        nb = nbrs[which]
        cand = np.take_along_axis(pf[:, None, :], nb, axis=2)
        best_nb = np.take_along_axis(nb, np.argmin(cand, axis=2)[..., None], axis=2)[..., 0]
        own_better = pf <= np.take_along_axis(pf, best_nb, axis=1)
        best_nb = np.where(own_better, rows[None, :], best_nb)
        x_soc = np.take_along_axis(pbest[which], best_nb[..., None], axis=1)

        x = pos[which]
        v = w * vel[which] + y1 * u1 * (pbest[which] - x) + y2 * u2 * (x_soc - x)
        x = x + v
        outside = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[outside] = 0.0
        pos[which] = x
        vel[which] = v

        fv = np.asarray(objective(x, which), dtype=float).reshape(which.size, p)
        _check_finite(fv, x, which)
        better = fv < pf
        pf = np.where(better, fv, pf)
        pb = np.where(better[..., None], x, pbest[which])
        pbest[which] = pb
        pbest_f[which] = pf

        new_g = np.argmin(pf, axis=1)
        old_best = history[-1][which]
        new_best = pf[np.arange(which.size), new_g]
        gidx[which] = new_g
        best_now = history[-1].copy()
        best_now[which] = new_best
        history.append(best_now)
        used[which] = it

        for n, k in enumerate(which):
            if not new_best[n] < old_best[n]:
                nbrs[k] = _draw_neighbors(rngs[k], p, size)
            if trace is not None:
                trace(int(k), it, float(new_best[n]), pf[n].copy())
            W = config.stall_iterations
            if it >= W and history[it - W][k] - new_best[n] <= config.stall_tolerance:
                active[k] = False

    return [
        PsoResult(pbest[k, gidx[k]].copy(), float(pbest_f[k, gidx[k]]), int(used[k]))
        for k in range(K)
    ]


def minimize(
    objective: Callable,
    lower,
    upper,
    config: PsoConfig,
    seed: int,
    *,
    vectorized: bool = False,
    initial_points=None,
    trace: TraceHook | None = None,
) -> PsoResult:
    """Minimise ``objective`` over the box ``[lower, upper]``.

    With ``vectorized=True`` the objective maps a ``(p, D)`` array of points to
    ``p`` values; otherwise it is called once per point.
    """

    def batched(points, which):
        pts = points[0]
        if vectorized:
            return np.asarray(objective(pts), dtype=float)[None, :]
        return np.array([[float(objective(z)) for z in pts]])

    return minimize_many(
        batched, lower, upper, config, [seed], initial_points=initial_points, trace=trace
    )[0]
