"""Step-size dependent truncation of SDE coefficients.

A policy pairs an envelope ``mu`` (dominating the coefficient norms on balls)
with a bound ``h(delta)``.  For a step ``delta`` states are projected radially
onto the ball of radius ``mu_inv(h(delta))`` before any coefficient is
evaluated, which caps every truncated coefficient by ``h(delta)``.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import PolicyRejectedError, UsageError

GRID_POINTS = 64
ROUNDTRIP_RTOL = 1e-10


@dataclass(frozen=True)
class TruncationPolicy:
    mu: Callable[[np.ndarray], np.ndarray]
    mu_inv: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    delta_star: float
    label: str = "custom"
    params: dict = field(default_factory=dict)

    @classmethod
    def power(cls, exponent=5.0, epsilon=0.1, delta_star=1.0):
        """``mu(u) = u**exponent`` and ``h(delta) = delta**-epsilon``."""
        if exponent <= 0 or epsilon <= 0:
            raise UsageError("exponent and epsilon must be positive")
        a, eps = float(exponent), float(epsilon)
        return cls(
            mu=lambda u: np.power(u, a),
            mu_inv=lambda v: np.power(v, 1.0 / a),
            h=lambda dt: np.power(dt, -eps),
            delta_star=float(delta_star),
            label=f"power: mu=u^{a:g}, h=delta^-{eps:g}",
            params={"family": "power", "exponent": a, "epsilon": eps,
                    "delta_star": float(delta_star)},
        )

    def context(self, step, validate=True):
        """Build the cached barrier for one step size.

        Validation runs first unless ``validate`` is false; a rejected policy
        raises :class:`PolicyRejectedError`.
        """
        if validate:
            validate_policy(self).raise_if_failed()
        return TruncationContext(self, step)


@dataclass
class PolicyCheck:
    name: str
    passed: bool
    worst_value: float
    worst_delta: float = float("nan")
    detail: str = ""


@dataclass
class ValidationReport:
    policy_label: str
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def summary(self):
        if self.passed:
            return f"policy {self.policy_label!r} admissible"
        parts = [f"{c.name} ({c.detail})" for c in self.failed()]
        return f"policy {self.policy_label!r} rejected: " + "; ".join(parts)

    def raise_if_failed(self):
        if not self.passed:
            raise PolicyRejectedError(self)
        return self


def validate_policy(policy, grid_points=GRID_POINTS):
    """Check admissibility of ``policy`` on logarithmic grids.

    Conditions: ``h(delta*) >= mu(1)``; ``delta**0.25 * h(delta) <= 1`` on
    ``(0, delta*]``; ``mu(mu_inv(v)) == v`` to relative 1e-10 for ``v >= mu(1)``;
    ``mu`` strictly increasing and ``h`` strictly decreasing.
    """
    if grid_points < 2:
        raise UsageError("grid_points must be >= 2")
    ds = policy.delta_star
    checks = []
    if not 0 < ds <= 1:
        checks.append(PolicyCheck("delta_star_range", False, ds,
                                  detail=f"delta_star={ds:g} not in (0, 1]"))
        return ValidationReport(policy.label, checks)

    deltas = np.geomspace(1e-8 * ds, ds, grid_points)
    h_vals = np.asarray(policy.h(deltas), dtype=float)
    mu1 = float(policy.mu(1.0))

    h_star = float(policy.h(ds))
    checks.append(PolicyCheck(
        "h(delta*) >= mu(1)", h_star >= mu1, h_star - mu1, ds,
        detail=f"h(delta*)={h_star:.6g}, mu(1)={mu1:.6g}"))

    quarter = deltas**0.25 * h_vals
    i = int(np.argmax(quarter))
    checks.append(PolicyCheck(
        "delta^(1/4) h(delta) <= 1", bool(quarter[i] <= 1.0 + 1e-12), float(quarter[i]),
        float(deltas[i]),
        detail=f"max delta^(1/4) h(delta) = {quarter[i]:.6g} at delta={deltas[i]:.3g}"))

    vs = mu1 * np.geomspace(1.0, 1e8, grid_points)
    rt = np.asarray(policy.mu(policy.mu_inv(vs)), dtype=float)
    rel = np.abs(rt - vs) / vs
    i = int(np.argmax(rel))
    checks.append(PolicyCheck(
        "mu(mu_inv(v)) == v", bool(rel[i] <= ROUNDTRIP_RTOL), float(rel[i]),
        detail=f"worst relative round-trip error {rel[i]:.3g} at v={vs[i]:.3g}"))

    us = np.geomspace(1e-6, 1e6, grid_points)
    mu_vals = np.asarray(policy.mu(us), dtype=float)
    mu_inc = bool(np.all(np.diff(mu_vals) > 0))
    checks.append(PolicyCheck("mu strictly increasing", mu_inc,
                              float(np.min(np.diff(mu_vals))),
                              detail="" if mu_inc else "mu not increasing on grid"))

    h_dec = bool(np.all(np.diff(h_vals) < 0))
    checks.append(PolicyCheck("h strictly decreasing", h_dec,
                              float(np.max(np.diff(h_vals))),
                              detail="" if h_dec else "h not decreasing on grid"))
    return ValidationReport(policy.label, checks)


class TruncationContext:
    """Barrier ``mu_inv(h(step))`` and bound ``h(step)`` for a fixed step."""

    def __init__(self, policy, step):
        step = float(step)
        if not 0 < step <= policy.delta_star:
            raise UsageError(
                f"step {step:g} outside (0, delta*={policy.delta_star:g}]")
        self.policy = policy
        self.step = step
        self.bound = float(policy.h(step))
        self.barrier = float(policy.mu_inv(self.bound))
        if not self.barrier > 0:
            raise UsageError(f"non-positive barrier {self.barrier:g}")
        back = float(policy.mu(self.barrier))
        if abs(back - self.bound) > ROUNDTRIP_RTOL * self.bound:
            raise UsageError("mu(barrier) does not reproduce h(step)")

    def __repr__(self):
        return (f"TruncationContext(step={self.step:g}, barrier={self.barrier:.6g}, "
                f"bound={self.bound:.6g})")


def truncate_point(ctx, x):
    """Project ``x`` (shape ``(..., d)``) onto the ball of radius ``ctx.barrier``.

    Rows inside the ball are returned bitwise unchanged; zero stays zero.
    """
    x = np.asarray(x, dtype=float)
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    outside = norm > ctx.barrier
    if not outside.any():
        return x
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = x * (ctx.barrier / norm)
    # a scaled norm can round above the barrier by one ulp; pull it back
    over = np.sqrt(np.sum(scaled * scaled, axis=-1, keepdims=True)) > ctx.barrier
    scaled = np.where(over, np.nextafter(scaled, 0.0), scaled)
    return np.where(outside, scaled, x)


def truncated_drift(ctx, system, x):
    return system.drift(truncate_point(ctx, x))


def truncated_diffusion(ctx, system, x, j):
    return system.diffusion_col(truncate_point(ctx, x), j)


def truncated_deriv(ctx, system, x, j, l):
    return system.diffusion_deriv(truncate_point(ctx, x), j, l)


def check_envelope(policy, system, step=None, radii=(2.0, 4.0, 8.0), samples=2000,
                   seed=0):
    """Sample spheres of each radius ``u`` and compare coefficient norms to ``mu(u)``.

    With ``step`` given, the barrier for that step is added to the radii.
    Returns ``{u: max_norm / mu(u)}``; values above 1 refute the envelope.
    The envelope is only required for ``u >= 2``; smaller radii are still
    reported because the barrier can lie below 2.
    """
    radii = list(radii)
    if step is not None:
        radii.append(TruncationContext(policy, step).barrier)
    rng = np.random.default_rng(seed)
    out = {}
    for u in radii:
        z = rng.standard_normal((samples, system.state_dim))
        z /= np.linalg.norm(z, axis=-1, keepdims=True)
        # mix in interior points: the sup runs over the whole ball
        radius = u * np.concatenate([np.ones(samples // 2),
                                     rng.uniform(0, 1, samples - samples // 2)])
        x = z * radius[:, None]
        norms = [np.linalg.norm(system.drift(x), axis=-1),
                 np.linalg.norm(system.diffusion(x), axis=-2).max(axis=-1),
                 np.linalg.norm(system.diffusion_jacobian(x), axis=-3)
                 .reshape(samples, -1).max(axis=-1)]
        out[float(u)] = float(np.max(norms) / policy.mu(u))
    return out
