"""Monte-Carlo strong errors, order fits and moment sweeps.

Samples are processed in fixed-size chunks.  Per-sample results land in
pre-sized arrays indexed by sample, and every reduction runs in index order,
so the worker count changes wall time only.
"""

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .brownian import PathGrid, coarsen_increments, sample_increments
from .exceptions import BlowUpError, UsageError
from .integrators import (TRUNCATED_MILSTEIN, interpolate_within_step, is_truncated,
                          simulate_batch)
from .sde_core import builtin_model, gbm_exact
from .truncation import TruncationContext, TruncationPolicy, validate_policy

log = logging.getLogger(__name__)

CHUNK_SIZE = 250
Z95 = NormalDist().inv_cdf(0.975)


@dataclass
class ExperimentSpec:
    model: str = "paper-example"
    model_params: dict = field(default_factory=dict)
    schemes: tuple = (TRUNCATED_MILSTEIN,)
    policy: dict = field(default_factory=lambda: {
        "family": "power", "exponent": 5.0, "epsilon": 0.1, "delta_star": 1.0})
    t_end: float = 2.0
    reference_exponent: int = 13
    coarse_exponents: tuple = (10, 9, 8, 7)
    samples: int = 1000
    seed: int = 20171
    error_power: float = 1.0  # 1 is the L1 error; 2p gives the 2p-moment root
    reference: str = "scheme"  # or "exact" (gbm only)
    reference_scheme: str = TRUNCATED_MILSTEIN
    p: float = 1.0
    q: float = None

    def validate(self):
        if self.samples < 2:
            raise UsageError("samples must be >= 2")
        if not self.coarse_exponents:
            raise UsageError("no coarse exponents given")
        for e in self.coarse_exponents:
            if e > self.reference_exponent:
                raise UsageError(
                    f"coarse exponent {e} exceeds reference exponent {self.reference_exponent}")
        if self.reference not in ("scheme", "exact"):
            raise UsageError("reference must be 'scheme' or 'exact'")
        if self.error_power <= 0:
            raise UsageError("error_power must be positive")
        PathGrid.dyadic(self.t_end, min(self.coarse_exponents))
        return self


def make_policy(params):
    params = dict(params)
    family = params.pop("family", "power")
    if family != "power":
        raise UsageError(f"unknown policy family {family!r}; available: power")
    return TruncationPolicy.power(**params)


@dataclass
class ConvergenceReport:
    scheme: str
    deltas: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray
    samples: np.ndarray  # samples used per delta
    excluded: np.ndarray  # blown-up samples per delta
    slope: float
    intercept: float
    halfwidth: float
    seed: int
    degenerate: bool = False

    def rows(self):
        for i in range(len(self.deltas)):
            yield (self.scheme, float(self.deltas[i]), float(self.errors[i]),
                   float(self.stderrs[i]), int(self.samples[i]), int(self.excluded[i]))


def fit_order(points):
    """Least-squares line through ``(log2 delta, log2 error)``.

    Returns ``(slope, intercept, halfwidth)`` where ``halfwidth`` is the 95%
    normal-quantile half-width of the slope.
    """
    points = list(points)
    if len(points) < 3:
        raise UsageError("need at least 3 points to fit an order")
    deltas = np.array([p[0] for p in points], dtype=float)
    errors = np.array([p[1] for p in points], dtype=float)
    if np.any(errors <= 0) or np.any(deltas <= 0):
        raise UsageError("step sizes and errors must be positive")
    x, y = np.log2(deltas), np.log2(errors)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise UsageError("step sizes must not all be equal")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    s = math.sqrt(float(np.sum(resid**2)) / (len(x) - 2)) if len(x) > 2 else 0.0
    return float(slope), float(intercept), float(Z95 * s / math.sqrt(sxx))


def rate_condition_holds(p, q, epsilon, exponent=5.0):
    """Rate condition for ``mu(u) = u**exponent``, ``h(delta) = delta**-epsilon``.

    For exponent 5 this is ``(10p/(q-p) + 1) eps >= 5p/(q-p)``.
    """
    if not q > p:
        raise UsageError("q must exceed p")
    s = p / (q - p)
    return (2 * exponent * s + 1) * epsilon >= exponent * s


def minimal_q(p, epsilon, exponent=5.0):
    """Smallest ``q`` meeting :func:`rate_condition_holds`."""
    if epsilon >= 0.5:
        return p
    return p + p * exponent * (1 - 2 * epsilon) / epsilon


def _chunks(n, size=CHUNK_SIZE):
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def _run_chunks(fn, chunks, workers):
    if workers <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def _norm(v):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.sqrt(np.sum(v * v, axis=-1))


def _check_rate_condition(spec):
    if spec.policy.get("family", "power") != "power" or spec.reference == "exact":
        return
    eps, a = spec.policy["epsilon"], spec.policy.get("exponent", 5.0)
    if spec.q is None:
        log.info("q unspecified; rate condition holds for q >= %g", minimal_q(spec.p, eps, a))
    elif not rate_condition_holds(spec.p, spec.q, eps, a):
        warnings.warn(
            f"rate condition fails for p={spec.p:g}, q={spec.q:g}, epsilon={eps:g}; "
            f"need q >= {minimal_q(spec.p, eps, a):g}", stacklevel=3)


def _summarize(abs_err, power):
    ok = np.isfinite(abs_err)
    e = abs_err[ok]
    n = e.size
    if n < 2:
        return float("nan"), float("nan"), n
    if power == 1:
        return float(e.mean()), float(e.std(ddof=1) / math.sqrt(n)), n
    mom = e**power
    mean = float(mom.mean())
    est = mean ** (1.0 / power)
    se_mean = float(mom.std(ddof=1) / math.sqrt(n))
    se = se_mean * est / (power * mean) if mean > 0 else 0.0
    return est, se, n


def strong_error(spec, workers=1):
    """Estimate strong errors at the terminal time for every scheme in ``spec``.

    Each sample's fine path on the reference grid drives the reference
    solution; coarse runs reuse the same path through exact coarsening.
    Returns one :class:`ConvergenceReport` per scheme, in ``spec.schemes`` order.
    """
    spec.validate()
    system = builtin_model(spec.model, **spec.model_params)
    policy = make_policy(spec.policy)
    validate_policy(policy).raise_if_failed()
    _check_rate_condition(spec)
    if spec.reference == "exact" and system.label != "gbm":
        raise UsageError("exact reference is only available for the gbm model")

    fine = PathGrid.dyadic(spec.t_end, spec.reference_exponent)
    exps = list(spec.coarse_exponents)
    schemes = list(spec.schemes)
    M, m = spec.samples, system.noise_dim
    ctxs = {e: TruncationContext(policy, 2.0**-e) for e in exps}
    abs_err = {(s, e): np.empty(M) for s in schemes for e in exps}

    def work(idx):
        inc = sample_increments(fine, m, spec.seed, idx)
        if spec.reference == "exact":
            b_end = coarsen_increments(inc, fine.steps, axis=1)[:, 0, :]
            ref = gbm_exact(system, spec.t_end, b_end)
        else:
            ref_ctx = (TruncationContext(policy, fine.step)
                       if is_truncated(spec.reference_scheme) else None)
            ref, blow = simulate_batch(system, spec.reference_scheme, inc, fine.step, ref_ctx)
            if (blow >= 0).any():
                i = idx[int(np.flatnonzero(blow >= 0)[0])]
                raise BlowUpError(f"reference solver blew up on sample {i}")
        for e in exps:
            coarse = coarsen_increments(inc, 2 ** (spec.reference_exponent - e), axis=1)
            for s in schemes:
                ctx = ctxs[e] if is_truncated(s) else None
                y, blow = simulate_batch(system, s, coarse, 2.0**-e, ctx)
                err = _norm(ref - y)
                err[blow >= 0] = np.nan
                abs_err[(s, e)][idx.start:idx.stop] = err

    _run_chunks(work, _chunks(M), workers)

    reports = []
    for s in schemes:
        rows = [_summarize(abs_err[(s, e)], spec.error_power) for e in exps]
        deltas = np.array([2.0**-e for e in exps])
        errors = np.array([r[0] for r in rows])
        stderrs = np.array([r[1] for r in rows])
        used = np.array([r[2] for r in rows])
        degenerate = not np.all(errors > 0) or len(exps) < 3
        if degenerate:
            slope = intercept = half = float("nan")
        else:
            slope, intercept, half = fit_order(zip(deltas, errors))
        reports.append(ConvergenceReport(
            scheme=s, deltas=deltas, errors=errors, stderrs=stderrs, samples=used,
            excluded=M - used, slope=slope, intercept=intercept, halfwidth=half,
            seed=spec.seed, degenerate=degenerate))
    return reports


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


ERRORS_HEADER = ("scheme", "delta", "error", "stderr", "samples", "excluded")
SLOPES_HEADER = ("scheme", "slope", "intercept", "halfwidth", "degenerate", "seed")


def write_errors_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERRORS_HEADER)
        for rep in reports:
            for row in rep.rows():
                w.writerow([_fmt(v) for v in row])


def write_slopes_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SLOPES_HEADER)
        for rep in reports:
            w.writerow([rep.scheme, _fmt(rep.slope), _fmt(rep.intercept),
                        _fmt(rep.halfwidth), int(rep.degenerate), rep.seed])


# moments -------------------------------------------------------------------

@dataclass
class MomentTable:
    deltas: np.ndarray
    p_list: tuple
    sup_moment: np.ndarray  # (len(deltas), len(p_list)), max over grid times
    sup_stderr: np.ndarray
    terminal_moment: np.ndarray
    terminal_stderr: np.ndarray
    excluded: np.ndarray  # per delta
    trend: np.ndarray  # per p: slope of sup_moment against log2(delta)

    def rows(self):
        for i, d in enumerate(self.deltas):
            for k, p in enumerate(self.p_list):
                yield (float(d), float(p), float(self.sup_moment[i, k]),
                       float(self.sup_stderr[i, k]), float(self.terminal_moment[i, k]),
                       float(self.terminal_stderr[i, k]), int(self.excluded[i]))


MOMENTS_HEADER = ("delta", "p", "sup_moment", "sup_stderr", "terminal_moment",
                  "terminal_stderr", "excluded")


def write_moments_csv(scheme, table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scheme",) + MOMENTS_HEADER)
        for row in table.rows():
            w.writerow([scheme] + [_fmt(v) for v in row])


def _dyadic_ladder(t_end, deltas):
    """Step counts for ``deltas`` plus the finest count; all must nest dyadically."""
    counts = []
    for d in deltas:
        n = t_end / d
        if abs(n - round(n)) > 1e-9 * n or round(n) < 1:
            raise UsageError(f"delta {d:g} does not divide T={t_end:g}")
        counts.append(int(round(n)))
    finest = max(counts)
    for n in counts:
        if finest % n or (finest // n) & (finest // n - 1):
            raise UsageError("step sizes must differ by powers of two")
    return counts, finest


def moment_sweep(system, scheme, policy, t_end, p_list, deltas, samples, seed,
                 workers=1):
    """Sample ``E|Y_t|^(2p)`` on each grid and take the max over grid times.

    All step sizes share one Brownian path per sample via coarsening.  The
    ``trend`` entry is the least-squares slope of the sup-moment against
    ``log2(delta)``; a negative value means moments grow as the step shrinks.
    """
    if samples < 100:
        raise UsageError("moment sweeps need at least 100 samples")
    deltas = [float(d) for d in deltas]
    if policy is not None and max(deltas) > policy.delta_star:
        raise UsageError("every delta must be <= delta*")
    if is_truncated(scheme) and policy is None:
        raise UsageError(f"scheme {scheme!r} needs a truncation policy")
    counts, finest = _dyadic_ladder(t_end, deltas)
    fine = PathGrid(float(t_end), finest)
    powers = np.array([2.0 * p for p in p_list])
    ctxs = [TruncationContext(policy, d) if is_truncated(scheme) else None for d in deltas]
    chunks = _chunks(samples)

    def work(idx):
        inc = sample_increments(fine, system.noise_dim, seed, idx)
        out = []
        for d, n, ctx in zip(deltas, counts, ctxs):
            coarse = coarsen_increments(inc, finest // n, axis=1)
            states, blow = simulate_batch(system, scheme, coarse, d, ctx, record=True)
            keep = blow < 0
            r = _norm(states[keep])  # (C', n + 1)
            mom = r[..., None] ** powers  # (C', n + 1, P)
            out.append((mom.sum(axis=0), (mom**2).sum(axis=0), int(keep.sum())))
        return out

    results = _run_chunks(work, chunks, workers)
    nd, npow = len(deltas), len(powers)
    sup_m = np.empty((nd, npow))
    sup_se = np.empty((nd, npow))
    term_m = np.empty((nd, npow))
    term_se = np.empty((nd, npow))
    excluded = np.empty(nd, dtype=np.int64)
    for i in range(nd):
        s1 = results[0][i][0].copy()
        s2 = results[0][i][1].copy()
        n = results[0][i][2]
        for res in results[1:]:
            s1 += res[i][0]
            s2 += res[i][1]
            n += res[i][2]
        excluded[i] = samples - n
        mean = s1 / n
        var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
        se = np.sqrt(var / n)
        arg = np.argmax(mean, axis=0)
        sup_m[i] = mean[arg, np.arange(npow)]
        sup_se[i] = se[arg, np.arange(npow)]
        term_m[i] = mean[-1]
        term_se[i] = se[-1]
    x = np.log2(deltas)
    trend = np.array([np.polyfit(x, sup_m[:, k], 1)[0] if nd > 1 else 0.0
                      for k in range(npow)])
    return MomentTable(np.array(deltas), tuple(p_list), sup_m, sup_se, term_m,
                       term_se, excluded, trend)


def midstep_second_moment(system, policy, t_end, deltas, samples, seed, workers=1):
    """``E|Y(t_k + delta/2) - Y_k|^2`` for truncated Milstein, averaged over k.

    The half-step increment is the first half of each step on a grid twice
    as fine, so the interpolant sees the true Brownian value at mid-step.
    Returns ``[(delta, mean, stderr), ...]``.
    """
    deltas = [float(d) for d in deltas]
    counts, finest = _dyadic_ladder(t_end, [d / 2 for d in deltas])
    fine = PathGrid(float(t_end), finest)
    ctxs = [TruncationContext(policy, d) for d in deltas]
    per_sample = np.empty((len(deltas), samples))

    def work(idx):
        inc = sample_increments(fine, system.noise_dim, seed, idx)
        for i, (d, n2, ctx) in enumerate(zip(deltas, counts, ctxs)):
            half = coarsen_increments(inc, finest // n2, axis=1)  # (C, 2N, m)
            full = coarsen_increments(half, 2, axis=1)
            states, _ = simulate_batch(system, TRUNCATED_MILSTEIN, full, d, ctx,
                                       record=True)
            y_k = states[:, :-1]
            y_mid = interpolate_within_step(system, ctx, y_k, half[:, 0::2], d / 2)
            sq = np.sum((y_mid - y_k) ** 2, axis=-1)
            per_sample[i, idx.start:idx.stop] = sq.mean(axis=1)

    _run_chunks(work, _chunks(samples), workers)
    return [(d, float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples)))
            for d, v in zip(deltas, per_sample)]
