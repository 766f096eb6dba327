"""SDE instances, the L^{j1} g_{j2} operator and sampling-based diagnostics.

Coefficients are vectorised over leading axes: a state batch has shape
``(..., d)``.  Indices for noise columns and coordinates are 0-based.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import NumericDomainError, UsageError


@dataclass(frozen=True)
class SdeSystem:
    """Autonomous SDE ``dx = f(x) dt + sum_j g_j(x) dB^j``.

    ``drift(x)`` maps ``(..., d) -> (..., d)``, ``diffusion(x)`` maps
    ``(..., d) -> (..., d, m)`` (column ``j`` is ``g_j``) and
    ``diffusion_jacobian(x)`` maps ``(..., d) -> (..., d, m, d)`` with entry
    ``[..., i, j, l] = d g_{i,j} / d x^l``.
    """

    state_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    diffusion_jacobian: Callable[[np.ndarray], np.ndarray]
    initial_state: np.ndarray
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.state_dim < 1 or self.noise_dim < 1:
            raise UsageError("state_dim and noise_dim must be positive")
        x0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        if x0.shape != (self.state_dim,):
            raise UsageError(
                f"initial_state has length {x0.size}, expected {self.state_dim}")
        object.__setattr__(self, "initial_state", x0)

    def _check_col(self, j):
        if not 0 <= j < self.noise_dim:
            raise UsageError(f"noise column {j} out of range [0, {self.noise_dim})")

    def _check_coord(self, l):
        if not 0 <= l < self.state_dim:
            raise UsageError(f"coordinate {l} out of range [0, {self.state_dim})")

    def diffusion_col(self, x, j):
        """g_j(x)."""
        self._check_col(j)
        return self.diffusion(np.asarray(x, dtype=float))[..., :, j]

    def diffusion_deriv(self, x, j, l):
        """G_j^l(x) = d g_j / d x^l."""
        self._check_col(j)
        self._check_coord(l)
        return self.diffusion_jacobian(np.asarray(x, dtype=float))[..., :, j, l]


def _as_state(system, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (system.state_dim,):
        raise UsageError(
            f"state has trailing dimension {x.shape[-1:]}, expected {system.state_dim}")
    return x


def _require_finite(values, what):
    bad = ~np.isfinite(values)
    if bad.any():
        coord = int(np.argwhere(bad)[0][-1])
        raise NumericDomainError(f"{what} is not finite in coordinate {coord}")
    return values


def lg_tensor(g, jac):
    """All L^{j1} g_{j2} from precomputed coefficients.

    ``g`` has shape ``(..., d, m)`` and ``jac`` ``(..., d, m, d)``.  Returns
    ``(..., d, m, m)`` with ``[..., :, j1, j2] = sum_l g_{l,j1} G_{j2}^l``.
    The sum over ``l`` runs in increasing order.
    """
    d, m = g.shape[-2], g.shape[-1]
    out = np.zeros(g.shape[:-2] + (d, m, m))
    for j1 in range(m):
        for j2 in range(m):
            acc = g[..., 0:1, j1] * jac[..., :, j2, 0]
            for l in range(1, d):
                acc = acc + g[..., l:l + 1, j1] * jac[..., :, j2, l]
            out[..., :, j1, j2] = acc
    return out


def eval_L_operator(system, x, j1, j2):
    """Evaluate ``L^{j1} g_{j2}(x) = sum_l g_{l,j1}(x) G_{j2}^l(x)``."""
    system._check_col(j1)
    system._check_col(j2)
    x = _require_finite(_as_state(system, x), "state")
    g = _require_finite(system.diffusion(x), "diffusion")
    jac = _require_finite(system.diffusion_jacobian(x), "diffusion derivative")
    return lg_tensor(g, jac)[..., :, j1, j2]


def _sample_box(rng, n, d, box):
    lo, hi = box
    return rng.uniform(lo, hi, size=(n, d))


def check_commutativity(system, samples=1000, seed=0, tol=1e-9, box=(-3.0, 3.0)):
    """Return ``(commutes, worst_residual)`` over sampled states.

    The residual is ``max |L^{j1} g_{l,j2} - L^{j2} g_{l,j1}|`` over samples,
    pairs ``j1 < j2`` and coordinates ``l``.
    """
    if samples < 1:
        raise UsageError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = _sample_box(rng, samples, system.state_dim, box)
    lg = lg_tensor(system.diffusion(x), system.diffusion_jacobian(x))
    worst = 0.0
    m = system.noise_dim
    for j1 in range(m):
        for j2 in range(j1 + 1, m):
            res = np.abs(lg[..., :, j1, j2] - lg[..., :, j2, j1])
            worst = max(worst, float(res.max()))
    return worst <= tol, worst


@dataclass
class AssumptionReport:
    """Worst lhs/rhs ratios found while sampling.  Ratios above 1 refute."""

    checked_pairs: int
    max_lhs_over_rhs: dict
    violated: dict
    sample_seed: int

    @property
    def any_violated(self):
        return any(self.violated.values())


def _jacobian_fd(fun, x, h):
    """Central-difference Jacobian: returns ``(..., d_out, d)``."""
    d = x.shape[-1]
    cols = []
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _hessian_fd(fun, x, h):
    """Second differences: returns ``(..., d_out, d, d)``."""
    d = x.shape[-1]
    f0 = fun(x)
    rows = []
    for a in range(d):
        ea = np.zeros(d)
        ea[a] = h
        row = []
        for b in range(d):
            eb = np.zeros(d)
            eb[b] = h
            if a == b:
                row.append((fun(x + ea) - 2 * f0 + fun(x - ea)) / h**2)
            else:
                row.append((fun(x + ea + eb) - fun(x + ea - eb)
                            - fun(x - ea + eb) + fun(x - ea - eb)) / (4 * h**2))
        rows.append(np.stack(row, axis=-1))
    return np.stack(rows, axis=-2)


def check_assumptions(system, candidate_constants, p=1.0, samples=10_000, seed=0,
                      box=(-3.0, 3.0)):
    """Try to falsify the growth and monotonicity assumptions by sampling.

    ``candidate_constants`` holds ``K1``, ``K2``, ``r`` and optionally
    ``alpha3`` (defaults to ``K2``).  Three conditions are scored:

    ``lipschitz``
        ``|f(x)-f(y)| v |g_j(x)-g_j(y)| v |L g(x) - L g(y)|
        <= K2 (1 + |x|^r + |y|^r) |x-y|``
    ``monotone``
        ``<x-y, f(x)-f(y)> + (2p-1) sum_j |g_j(x)-g_j(y)|^2 <= K1 |x-y|^2``
    ``derivative_growth``
        first and second derivatives of every component of f and g bounded
        by ``alpha3 (1 + |x|^(r+1))``.  f', f'' and g'' use finite differences.

    This can refute a candidate, never prove one.
    """
    K1 = float(candidate_constants["K1"])
    K2 = float(candidate_constants["K2"])
    r = float(candidate_constants["r"])
    alpha3 = float(candidate_constants.get("alpha3", K2))
    if min(K1, K2, r, alpha3) <= 0:
        raise UsageError("candidate constants must be positive")
    if p < 1:
        raise UsageError("p must be >= 1")

    rng = np.random.default_rng(seed)
    d, m = system.state_dim, system.noise_dim
    x = _sample_box(rng, samples, d, box)
    y = _sample_box(rng, samples, d, box)
    diff = x - y
    dist = np.linalg.norm(diff, axis=-1)
    keep = dist > 0
    x, y, diff, dist = x[keep], y[keep], diff[keep], dist[keep]

    fx, fy = system.drift(x), system.drift(y)
    gx, gy = system.diffusion(x), system.diffusion(y)
    jx, jy = system.diffusion_jacobian(x), system.diffusion_jacobian(y)
    lgx, lgy = lg_tensor(gx, jx), lg_tensor(gy, jy)

    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    lip_lhs = np.linalg.norm(fx - fy, axis=-1)
    lip_lhs = np.maximum(lip_lhs, np.linalg.norm(gx - gy, axis=-2).max(axis=-1))
    lip_lhs = np.maximum(
        lip_lhs, np.linalg.norm(lgx - lgy, axis=-3).reshape(len(x), -1).max(axis=-1))
    lip_ratio = lip_lhs / (K2 * (1 + nx**r + ny**r) * dist)

    mono_lhs = np.sum(diff * (fx - fy), axis=-1) + (2 * p - 1) * np.sum(
        (gx - gy) ** 2, axis=(-2, -1))
    mono_ratio = mono_lhs / (K1 * dist**2)

    h = 1e-4
    g_flat = lambda z: system.diffusion(z).reshape(z.shape[:-1] + (d * m,))
    df = _jacobian_fd(system.drift, x, h)
    d2f = _hessian_fd(system.drift, x, h)
    dg = np.moveaxis(jx, -3, -2).reshape(len(x), d * m, d)
    d2g = _hessian_fd(g_flat, x, h)
    deriv_lhs = np.maximum.reduce([
        np.linalg.norm(df, axis=-1).max(axis=-1),
        np.linalg.norm(d2f, axis=(-2, -1)).max(axis=-1),
        np.linalg.norm(dg, axis=-1).max(axis=-1),
        np.linalg.norm(d2g, axis=(-2, -1)).max(axis=-1),
    ])
    deriv_ratio = deriv_lhs / (alpha3 * (1 + nx ** (r + 1)))

    ratios = {
        "lipschitz": float(lip_ratio.max(initial=0.0)),
        "monotone": float(mono_ratio.max(initial=0.0)),
        "derivative_growth": float(deriv_ratio.max(initial=0.0)),
    }
    return AssumptionReport(
        checked_pairs=int(len(x)),
        max_lhs_over_rhs=ratios,
        violated={k: v > 1.0 for k, v in ratios.items()},
        sample_seed=seed,
    )


# built-in models -----------------------------------------------------------

def _paper_example(x0=1.0):
    # powers by repeated multiplication keep results independent of batch shape
    def drift(x):
        x2 = x * x
        return x - x2 * x2 * x

    def diffusion(x):
        return (x * x)[..., :, None]

    def jacobian(x):
        return (2.0 * x)[..., :, None, None]

    return SdeSystem(1, 1, drift, diffusion, jacobian, [x0],
                     label="paper-example", params={"x0": x0})


def _gbm(a=0.05, sigma=0.2, x0=1.0):
    def drift(x):
        return a * x

    def diffusion(x):
        return (sigma * x)[..., :, None]

    def jacobian(x):
        return np.full(x.shape + (1, 1), sigma)

    return SdeSystem(1, 1, drift, diffusion, jacobian, [x0], label="gbm",
                     params={"a": a, "sigma": sigma, "x0": x0})


def _linear_2d_diagonal(a1=0.1, a2=-0.2, sigma1=1.0, sigma2=1.0, x0=(1.0, 1.0)):
    rates = np.array([a1, a2])
    sig = np.array([sigma1, sigma2])

    def drift(x):
        return rates * x

    def diffusion(x):
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = sigma1 * x[..., 0]
        out[..., 1, 1] = sigma2 * x[..., 1]
        return out

    def jacobian(x):
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 0, 0] = sig[0]
        out[..., 1, 1, 1] = sig[1]
        return out

    return SdeSystem(2, 2, drift, diffusion, jacobian, list(x0),
                     label="linear-2d-diagonal",
                     params={"a1": a1, "a2": a2, "sigma1": sigma1,
                             "sigma2": sigma2, "x0": tuple(x0)})


MODELS = {
    "paper-example": _paper_example,
    "gbm": _gbm,
    "linear-2d-diagonal": _linear_2d_diagonal,
}


def builtin_model(name, **params):
    """Look up a registered model by name; keyword params go to its factory."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise UsageError(
            f"unknown model {name!r}; available: {', '.join(sorted(MODELS))}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for model {name!r}: {exc}") from None


def register_model(name: str, factory: Callable[..., SdeSystem]) -> None:
    if name in MODELS:
        raise UsageError(f"model {name!r} already registered")
    MODELS[name] = factory


def gbm_exact(system: SdeSystem, t: float, brownian_value) -> np.ndarray:
    """Closed-form GBM state ``x0 exp((a - sigma^2/2) t + sigma B(t))``."""
    if system.label != "gbm":
        raise UsageError("exact solution is only available for the gbm model")
    a, sigma = system.params["a"], system.params["sigma"]
    b = np.asarray(brownian_value, dtype=float)
    return system.initial_state[0] * np.exp((a - 0.5 * sigma**2) * t + sigma * b)


def check_derivative_consistency(system: SdeSystem, samples: int = 100, seed: int = 0,
                                 h: float = 1e-5, box=(-2.0, 2.0)) -> float:
    """Worst ``|G - fd| / (1 + |G|)`` over sampled states, ``fd`` being the
    central difference of ``g`` at step ``h``."""
    rng = np.random.default_rng(seed)
    x = _sample_box(rng, samples, system.state_dim, box)
    jac = system.diffusion_jacobian(x)
    fd = _jacobian_fd(system.diffusion, x, h)  # (..., d, m, d)
    return float((np.abs(jac - fd) / (1 + np.abs(jac))).max())
