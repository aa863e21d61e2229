"""Constrained batched rollouts shared by the planners.

Planners search over points ``z`` of the box ``[-1, 1]^(2*entries)``. Each 2D
block of ``z`` is mapped radially onto the unit disk and scaled by
``rho * |v|`` using the bird's velocity at that moment of the rollout, so every
decoded acceleration satisfies ``|a| <= rho |v|``. If the new velocity would
exceed ``v_max`` the acceleration is shortened to land on the speed limit;
projection onto a ball containing ``v`` never lengthens ``a``.
"""

from __future__ import annotations

import numpy as np

from .flock import FlockParams, batch_cost


def square_to_disk(z: np.ndarray) -> np.ndarray:
    """Radial bijection from the square ``[-1, 1]^2`` onto the unit disk."""
    r_inf = np.maximum(np.abs(z[..., 0]), np.abs(z[..., 1]))
    r_2 = np.sqrt(z[..., 0] ** 2 + z[..., 1] ** 2)
    scale = np.divide(r_inf, r_2, out=np.zeros_like(r_2), where=r_2 > 0)
    return z * scale[..., None]


def decode_accel(z: np.ndarray, v: np.ndarray, params: FlockParams) -> np.ndarray:
    speed = np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)
    a = square_to_disk(z) * (params.accel_ratio * speed)[..., None]
    vn = v + a
    sp = np.sqrt(vn[..., 0] ** 2 + vn[..., 1] ** 2)
    over = sp > params.v_max
    if np.any(over):
        shrink = np.where(over, params.v_max / np.where(over, sp, 1.0), 1.0)
        a = np.where(over[..., None], vn * shrink[..., None] - v, a)
    return a


def rollout(
    x0: np.ndarray,
    v0: np.ndarray,
    z: np.ndarray,
    params: FlockParams,
    free: np.ndarray | None = None,
    fixed: np.ndarray | None = None,
):
    """Roll a batch of search points forward from one start configuration.

    ``z`` has shape ``(N, 2 * n_free)``. ``free`` is an ``(L, b)`` mask of the
    acceleration entries taken from ``z`` (in row-major order); the others are
    read from ``fixed`` (``(L, b, 2)``). Without a mask every entry is free
    and ``L = n_free / b``.

    Returns final positions and velocities ``(N, b, 2)`` and the decoded
    accelerations ``(N, L, b, 2)``.
    """
    b = x0.shape[0]
    N = z.shape[0]
    if free is None:
        L = z.shape[1] // (2 * b)
        free = np.ones((L, b), dtype=bool)
    L = free.shape[0]
    zz = z.reshape(N, -1, 2)
    x = np.broadcast_to(x0, (N, b, 2))
    v = np.broadcast_to(v0, (N, b, 2))
    accels = np.zeros((N, L, b, 2))
    cursor = 0
    for t in range(L):
        mask = free[t]
        nf = int(mask.sum())
        if fixed is not None:
            a = np.broadcast_to(fixed[t], (N, b, 2)).copy()
        else:
            a = np.zeros((N, b, 2))
        if nf:
            a[:, mask] = decode_accel(zz[:, cursor : cursor + nf], v[:, mask], params)
            cursor += nf
        accels[:, t] = a
        x = x + v
        v = v + a
    return x, v, accels


def rollout_costs(x0, v0, z, params, free=None, fixed=None) -> np.ndarray:
    x, v, _ = rollout(x0, v0, z, params, free, fixed)
    return batch_cost(x, v, params)
