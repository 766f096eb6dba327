"""One-step maps and path drivers.

All step maps accept batches: ``y`` has shape ``(..., d)`` and ``dB`` shape
``(..., m)``.  Arithmetic is elementwise in a fixed order, so a sample gives
the same bits whether it is simulated alone or inside a batch.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .brownian import PathGrid
from .exceptions import UsageError
from .sde_core import lg_tensor
from .truncation import TruncationContext, truncate_point

TRUNCATED_MILSTEIN = "truncated-milstein"
CLASSICAL_MILSTEIN = "classical-milstein"
TRUNCATED_EULER = "truncated-euler"
EULER_MARUYAMA = "euler-maruyama"

SCHEMES = {
    # name: (uses Milstein correction, uses truncation)
    TRUNCATED_MILSTEIN: (True, True),
    CLASSICAL_MILSTEIN: (True, False),
    TRUNCATED_EULER: (False, True),
    EULER_MARUYAMA: (False, False),
}


def is_truncated(scheme):
    return _lookup(scheme)[1]


def _lookup(scheme):
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise UsageError(
            f"unknown scheme {scheme!r}; available: {', '.join(SCHEMES)}") from None


def _euler_part(system, z, y, dB, dt):
    g = system.diffusion(z)
    out = y + system.drift(z) * dt
    for j in range(system.noise_dim):
        out = out + g[..., :, j] * dB[..., j:j + 1]
    return out, g


def _milstein_map(system, z, y, dB, dt):
    """Milstein update with coefficients evaluated at ``z``.

    The correction is ``1/2 sum_{j1,j2} L^{j1}g_{j2} (dB^j1 dB^j2 - [j1 == j2] dt)``
    summed over the full (j1, j2) square in row-major order.
    """
    out, g = _euler_part(system, z, y, dB, dt)
    lg = lg_tensor(g, system.diffusion_jacobian(z))
    m = system.noise_dim
    corr = np.zeros_like(out)
    for j1 in range(m):
        for j2 in range(m):
            w = dB[..., j1:j1 + 1] * dB[..., j2:j2 + 1]
            if j1 == j2:
                w = w - dt
            corr = corr + lg[..., :, j1, j2] * w
    return out + 0.5 * corr


def _prepare(system, y, dB):
    y = np.asarray(y, dtype=float)
    dB = np.asarray(dB, dtype=float)
    if y.shape[-1:] != (system.state_dim,):
        raise UsageError(f"state must have trailing dimension {system.state_dim}")
    if dB.ndim == 0:
        dB = dB.reshape(1)
    if dB.shape[-1:] != (system.noise_dim,):
        raise UsageError(f"dB must have trailing dimension {system.noise_dim}")
    return y, dB


def _check_ctx_step(ctx, dt):
    if abs(ctx.step - dt) > 1e-12 * ctx.step:
        raise UsageError(f"step {dt:g} does not match context step {ctx.step:g}")


def truncated_milstein_step(system, ctx, y, dB, dt):
    y, dB = _prepare(system, y, dB)
    _check_ctx_step(ctx, dt)
    return _milstein_map(system, truncate_point(ctx, y), y, dB, dt)


def classical_milstein_step(system, y, dB, dt):
    """Commutative-noise Milstein step.  Commutativity is the caller's duty."""
    y, dB = _prepare(system, y, dB)
    return _milstein_map(system, y, y, dB, dt)


def truncated_euler_step(system, ctx, y, dB, dt):
    y, dB = _prepare(system, y, dB)
    _check_ctx_step(ctx, dt)
    return _euler_part(system, truncate_point(ctx, y), y, dB, dt)[0]


def euler_maruyama_step(system, y, dB, dt):
    y, dB = _prepare(system, y, dB)
    return _euler_part(system, y, y, dB, dt)[0]


def interpolate_within_step(system, ctx, y_k, dB_partial, s_minus_tk):
    """Continuous truncated Milstein value at ``t_k + s`` given ``B(t_k+s) - B(t_k)``.

    At ``s = step`` with the full increment this reproduces
    :func:`truncated_milstein_step` bit for bit.  ``ctx=None`` gives the
    untruncated interpolant.
    """
    s = float(s_minus_tk)
    if ctx is not None and not 0.0 <= s <= ctx.step:
        raise UsageError(f"s - t_k = {s:g} outside [0, {ctx.step:g}]")
    if s < 0:
        raise UsageError("s - t_k must be non-negative")
    y, dB = _prepare(system, y_k, dB_partial)
    z = y if ctx is None else truncate_point(ctx, y)
    return _milstein_map(system, z, y, dB, s)


def step_function(scheme):
    """Batch step ``(system, ctx, y, dB, dt) -> y_next`` for a scheme name."""
    milstein, truncated = _lookup(scheme)
    core = _milstein_map if milstein else (lambda *a: _euler_part(*a)[0])
    if truncated:
        return lambda system, ctx, y, dB, dt: core(
            system, truncate_point(ctx, y), y, dB, dt)
    return lambda system, ctx, y, dB, dt: core(system, y, y, dB, dt)


def _check_ctx(scheme, ctx, dt):
    if is_truncated(scheme):
        if ctx is None:
            raise UsageError(f"scheme {scheme!r} needs a truncation context")
        _check_ctx_step(ctx, dt)
    elif ctx is not None:
        raise UsageError(f"scheme {scheme!r} does not take a truncation context")


def simulate_batch(system, scheme, increments, dt, ctx=None, record=False):
    """Run ``scheme`` over a batch of increment sequences.

    Parameters
    ----------
    increments : array of shape (M, N, m)
    dt : float
        Step size of the grid the increments live on.
    record : bool
        Keep every state (memory ``M * (N + 1) * d``) instead of the last one.

    Returns
    -------
    states : (M, d) terminal states, or (M, N + 1, d) when ``record``.
    blowup : (M,) int array, first step index with a non-finite state, -1 if none.
    """
    _check_ctx(scheme, ctx, dt)
    step = step_function(scheme)
    increments = np.asarray(increments, dtype=float)
    M, N = increments.shape[:2]
    y = np.broadcast_to(system.initial_state, (M, system.state_dim)).copy()
    blowup = np.full(M, -1, dtype=np.int64)
    if record:
        states = np.empty((M, N + 1, system.state_dim))
        states[:, 0] = y
    with np.errstate(all="ignore"):
        for k in range(N):
            y = step(system, ctx, y, increments[:, k], dt)
            bad = ~np.isfinite(y).all(axis=-1)
            if bad.any():
                fresh = bad & (blowup < 0)
                blowup[fresh] = k + 1
            if record:
                states[:, k + 1] = y
    if record:
        for i in np.flatnonzero(blowup >= 0):
            states[i, blowup[i] + 1:] = np.nan
        return states, blowup
    return y, blowup


@dataclass
class Trajectory:
    grid: PathGrid
    states: np.ndarray  # (N + 1, d)
    scheme: str
    ctx: Optional[TruncationContext] = None
    blowup_index: Optional[int] = None

    @property
    def blown_up(self):
        return self.blowup_index is not None

    @property
    def times(self):
        return self.grid.times

    def piecewise_constant(self, t):
        """Value of the step-function reading of the states at time ``t``."""
        k = min(int(np.floor(t / self.grid.step)), self.grid.steps)
        return self.states[k]


def simulate(system, scheme, grid, path, ctx=None):
    """Fold the step map of ``scheme`` over every increment of ``path``.

    A non-finite state marks the trajectory as blown up; later rows are NaN.
    """
    if path.grid != grid:
        raise UsageError("path grid does not match the simulation grid")
    if path.noise_dim != system.noise_dim:
        raise UsageError("path noise dimension does not match the system")
    states, blowup = simulate_batch(system, scheme, path.increments[None], grid.step,
                                    ctx=ctx, record=True)
    b = int(blowup[0])
    return Trajectory(grid, states[0], scheme, ctx, None if b < 0 else b)
