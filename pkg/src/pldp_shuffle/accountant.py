"""Trade-off curve and central (epsilon, delta) bound after shuffling.

Given the worst-case user's clone probability ``w`` and failure probability
``delta1`` plus the clone-count weights of the other users, the threshold
family t >= 0 indexes likelihood-ratio tests between the two clone-count
mixtures.  With s_i = (i+1)/(t+1) and F_i the Bin(i, 1/2) distribution
function

    alpha(t) = sum_i w_i F_i(i - s_i)
    beta(t)  = sum_i w_i F_i(i + 1 - s_i)

and the central bound at a given epsilon is

    delta_s = (-e^eps + (1-delta1) 2w + delta1) alpha(t_eps)
              + (1-delta1)(1-2w) beta(t_eps)

where t_eps is the smallest t at which the slope condition on l(t) holds.
All sums run over every clone count i in [0, n-1].
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .clone_count import CloneCountDistribution, binom_half_cdf, binom_half_pmf, log_binom_half_pmf, poisson_binomial
from .clone_probability import CloneProbabilities
from .errors import NumericError
from .mechanisms import MechanismSpec

T_MAX = 1e12
T_REL_TOL = 1e-12
VERIFY_POINTS = 256
EPS_ABS_TOL = 1e-6
# cap on threshold pieces enumerated per bound evaluation
MAX_PIECES = 2_000_000
# relative half-width of the search window around t_eps
WINDOW = 0.05
DELTA_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class AmplificationInput:
    """Everything the bound needs about one shuffled population."""

    n: int
    w: float
    delta1: float
    counts: CloneCountDistribution
    epsilon1: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if len(self.counts) != self.n:
            raise ValueError(f"counts has {len(self.counts)} weights, expected n = {self.n}")
        if not 0.0 <= self.w <= 0.5:
            raise ValueError(f"w must lie in [0, 1/2], got {self.w}")
        if not 0.0 <= self.delta1 < 1.0 + 1e-15:
            raise ValueError(f"delta1 must lie in [0, 1], got {self.delta1}")
        lo, hi = self.counts.support
        idx = np.arange(lo, hi, dtype=float)
        weights = self.counts.weights[lo:hi]
        object.__setattr__(self, "_idx", idx)
        object.__setattr__(self, "_wts", weights)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logw", np.log(weights))

    @classmethod
    def from_clone_probabilities(
        cls, probs: CloneProbabilities, delta1: float = 0.0, epsilon1: float | None = None,
        truncate: float | None = None,
    ) -> "AmplificationInput":
        counts = poisson_binomial(2.0 * probs.p_rest, truncate=truncate)
        return cls(probs.n, probs.p1, delta1, counts, epsilon1)


@dataclass(frozen=True)
class TradeoffPoint:
    t: float
    alpha: float
    f_value: float


@dataclass(frozen=True)
class PrivacyBound:
    epsilon: float
    delta: float
    # None when no finite threshold exists and the dual value was used
    t_epsilon: float | None = None
    amplified: bool = True
    # threshold at which the reported delta is attained
    t_star: float | None = None


def _shift(inp: AmplificationInput, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    if math.isinf(t):
        return np.zeros_like(inp._idx)
    return (inp._idx + 1.0) / (t + 1.0)


def _alpha_beta(inp: AmplificationInput, t: float) -> tuple[float, float]:
    s = _shift(inp, t)
    i = inp._idx
    a = float(np.dot(inp._wts, binom_half_cdf(i, i - s)))
    b = float(np.dot(inp._wts, binom_half_cdf(i, i + 1.0 - s)))
    return a, b


def alpha_of_t(inp: AmplificationInput, t: float) -> float:
    """Type-I error alpha(t) of the threshold-t test."""
    return _alpha_beta(inp, t)[0]


def beta_of_t(inp: AmplificationInput, t: float) -> float:
    return _alpha_beta(inp, t)[1]


def f_s_at(inp: AmplificationInput, t: float) -> TradeoffPoint:
    """Trade-off expression evaluated literally at threshold ``t``.

    Note that at alpha = 1 this gives (1-delta1)(1-2w), not 0, so it is not a
    valid trade-off endpoint; :func:`tradeoff_at` is the version consistent
    with :func:`delta_s`.
    """
    a, b = _alpha_beta(inp, t)
    w, d1 = inp.w, inp.delta1
    f = (1 - d1) * (2 * w * (1 - a) + (1 - 2 * w) * b) + d1 * (1 - a)
    return TradeoffPoint(t, a, f)


def tradeoff_at(inp: AmplificationInput, t: float) -> TradeoffPoint:
    """Trade-off curve with the complementary CDF in the mixture term.

    This is the curve whose convex conjugate is the delta_s expression: it
    runs from f(0) = 1 to f(1) = 0.
    """
    a, b = _alpha_beta(inp, t)
    w, d1 = inp.w, inp.delta1
    f = (1 - d1) * (2 * w * (1 - a) + (1 - 2 * w) * (1 - b)) + d1 * (1 - a)
    return TradeoffPoint(t, a, f)


def _l_many(inp: AmplificationInput, ts: np.ndarray) -> np.ndarray:
    i = inp._idx
    with np.errstate(divide="ignore"):
        inv = np.where(np.isinf(ts), 0.0, 1.0 / (ts + 1.0))
    k = np.floor(i[None, :] - (i[None, :] + 1.0) * inv[:, None])
    log_den = logsumexp(inp._logw + log_binom_half_pmf(i, k), axis=1)
    log_num = logsumexp(inp._logw + log_binom_half_pmf(i, k + 1.0), axis=1)
    with np.errstate(invalid="ignore"):
        out = -np.exp(log_num - log_den)
    return np.where(log_den == -np.inf, -np.inf, out)


def l_of_t(inp: AmplificationInput, t: float) -> float:
    """Ratio -sum w_i f_i(floor(i+1-s_i)) / sum w_i f_i(floor(i-s_i)).

    Both sums are formed in log space.  Returns ``-inf`` when the denominator
    vanishes, i.e. when ``t`` is below the usable range.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(_l_many(inp, np.array([float(t)]))[0])


def _condition_many(inp: AmplificationInput, epsilon: float, ts: np.ndarray) -> np.ndarray:
    w, d1 = inp.w, inp.delta1
    coef = (1.0 - d1) * (1.0 - 2.0 * w)
    if coef == 0.0:
        # the l term carries no weight, even where l is -inf
        slope = np.zeros(ts.size)
    else:
        slope = coef * _l_many(inp, ts)
    return (1 - d1) * -2.0 * w + slope - d1 >= -math.exp(epsilon)


def _condition(inp: AmplificationInput, epsilon: float, t: float) -> bool:
    return bool(_condition_many(inp, epsilon, np.array([float(t)]))[0])


def _bisect_threshold(inp, epsilon, lo, hi):
    # invariant: condition false at lo, true at hi
    while hi - lo > T_REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if _condition(inp, epsilon, mid):
            hi = mid
        else:
            lo = mid
    return hi


def t_epsilon(inp: AmplificationInput, epsilon: float) -> float | None:
    """Smallest t satisfying the slope condition, or None if none below 1e12.

    The condition is not assumed monotone: after bisection a uniform scan of
    the bracket looks for an earlier satisfying point and refines that
    instead.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if _condition(inp, epsilon, 0.0):
        return 0.0
    hi = 1.0
    while not _condition(inp, epsilon, hi):
        if hi >= T_MAX:
            return None
        hi = min(2.0 * hi, T_MAX)
    t_hi = hi
    lo = 0.0 if hi == 1.0 else hi / 2.0
    t = _bisect_threshold(inp, epsilon, lo, hi)

    grid = np.linspace(0.0, t_hi, VERIFY_POINTS + 1)[1:]
    grid = grid[grid < t]
    # scan in chunks so the (points x support) arrays stay modest
    step = max(1, 2_000_000 // max(1, inp._idx.size))
    for start in range(0, grid.size, step):
        part = grid[start:start + step]
        hits = np.flatnonzero(_condition_many(inp, epsilon, part))
        if hits.size:
            k = start + int(hits[0])
            return _bisect_threshold(inp, epsilon, grid[k - 1] if k else 0.0, grid[k])
    return t


def _bound_expression(inp: AmplificationInput, epsilon: float, alpha, beta):
    w, d1 = inp.w, inp.delta1
    c_alpha = -math.exp(epsilon) + (1 - d1) * 2 * w + d1
    c_beta = (1 - d1) * (1 - 2 * w)
    return c_alpha * alpha + c_beta * beta


def _piece_sup(inp: AmplificationInput, epsilon: float, t_lo: float, t_hi: float) -> tuple[float, float]:
    """Exact maximum of the bound expression over the threshold pieces in [t_lo, t_hi].

    alpha and beta are step functions of t.  Component i steps up when its
    floor reaches m, at t = (i+1)/(i-m) - 1, adding w_i f_i(m) to alpha and
    w_i f_i(m+1) to beta.  Starting from the value at t_lo, a cumulative sum
    of the sorted increments visits the value of every piece.
    """
    i = inp._idx
    a0, b0 = _alpha_beta(inp, t_lo)
    start = float(_bound_expression(inp, epsilon, a0, b0))
    k_lo = np.floor(i - _shift(inp, t_lo)).astype(np.int64)
    k_hi = (i - 1).astype(np.int64) if math.isinf(t_hi) else np.floor(i - _shift(inp, t_hi)).astype(np.int64)
    sizes = np.maximum(k_hi - k_lo, 0)
    if sizes.sum() == 0:
        return start, t_lo
    # one pmf run per component covers m = k_lo+1 .. k_hi+1; the alpha step
    # uses all but the last entry of the run, the beta step all but the first
    run = sizes + (sizes > 0)
    jj = np.repeat(i, run)
    starts = np.concatenate(([0], np.cumsum(run)[:-1]))
    mm = np.repeat(k_lo + 1, run) + np.arange(jj.size) - np.repeat(starts, run)
    pmf = binom_half_pmf(jj, mm)
    last = np.zeros(jj.size, dtype=bool)
    last[(starts + run - 1)[sizes > 0]] = True
    first = np.zeros(jj.size, dtype=bool)
    first[starts[sizes > 0]] = True
    ii, m = jj[~last], mm[~last]
    ww = np.repeat(inp._wts, sizes)
    t_break = (ii + 1.0) / (ii - m) - 1.0
    w, d1 = inp.w, inp.delta1
    c_alpha = -math.exp(epsilon) + (1 - d1) * 2 * w + d1
    c_beta = (1 - d1) * (1 - 2 * w)
    inc = ww * (c_alpha * pmf[~last] + c_beta * pmf[~first])
    order = np.argsort(t_break, kind="stable")
    t_sorted = t_break[order]
    values = start + np.cumsum(inc[order])
    # a piece starts after the last of any simultaneous steps
    last = np.append(t_sorted[1:] != t_sorted[:-1], True)
    values, t_sorted = values[last], t_sorted[last]
    k = int(np.argmax(values))
    if values[k] > start:
        return float(values[k]), float(t_sorted[k])
    return start, t_lo


def _piece_count(inp: AmplificationInput, t_lo: float, t_hi: float) -> int:
    i = inp._idx
    k_lo = np.floor(i - _shift(inp, t_lo))
    k_hi = i - 1 if math.isinf(t_hi) else np.floor(i - _shift(inp, t_hi))
    return int(np.maximum(k_hi - k_lo, 0).sum())


def _clamp(value: float) -> float:
    # below DELTA_FLOOR the operands have underflowed and the sign is noise
    return 0.0 if value < DELTA_FLOOR else min(1.0, float(value))


def delta_s(inp: AmplificationInput, epsilon: float, refine: bool = True) -> PrivacyBound:
    """Central delta after shuffling at the given epsilon, clamped to [0, 1].

    With ``refine=False`` the bound expression is evaluated at t_eps only.
    Otherwise it is maximised exactly over the threshold pieces: all of them
    when there are few, else those in a narrow window around t_eps, where the
    expression peaks sharply for large populations.  The literal value can
    undercut the true divergence when only a few clone counts carry mass.
    """
    t = t_epsilon(inp, epsilon)
    literal = None
    if t is not None:
        literal = _bound_expression(inp, epsilon, *_alpha_beta(inp, t))
    if not refine:
        if literal is None:
            return PrivacyBound(epsilon, _clamp(delta_s_dual(inp, epsilon)), None)
        return PrivacyBound(epsilon, _clamp(literal), t, t_star=t)

    if _piece_count(inp, 0.0, math.inf) <= MAX_PIECES:
        value, t_star = _piece_sup(inp, epsilon, 0.0, math.inf)
    elif t is None:
        return PrivacyBound(epsilon, _clamp(delta_s_dual(inp, epsilon)), None)
    else:
        r = WINDOW
        while r > 1e-6 and _piece_count(inp, t * (1 - r), t * (1 + r)) > MAX_PIECES:
            r /= 2
        value, t_star = _piece_sup(inp, epsilon, t * (1 - r), t * (1 + r))
    if literal is not None and literal >= value:
        value, t_star = literal, t
    return PrivacyBound(epsilon, _clamp(value), t, t_star=t_star)


def _cdf_table(i: int) -> np.ndarray:
    """F_i(0..i) by direct summation of the pmf, lower half from the left."""
    k = np.arange(i + 1, dtype=float)
    pmf = np.exp(log_binom_half_pmf(float(i), k))
    half = (i + 1) // 2
    out = np.empty(i + 1)
    out[:half] = np.cumsum(pmf[:half])
    # F(k) = 1 - F(i-k-1) for the upper half
    mirror = i - np.arange(half, i + 1) - 1
    lower_full = np.concatenate(([0.0], np.cumsum(pmf)))
    out[half:] = 1.0 - np.where(mirror >= 0, lower_full[np.maximum(mirror, 0) + 1], 0.0)
    return out


def delta_s_dual(inp: AmplificationInput, epsilon: float, grid_size: int = 4096) -> float:
    """sup over a log-spaced t grid of 1 - e^eps alpha - f(alpha).

    ``f`` is :func:`tradeoff_at`.  The distribution functions come from direct
    pmf summation rather than the incomplete beta, so this is an independent
    evaluation of the same supremum that :func:`delta_s` locates via t_eps.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    ts = np.concatenate(([0.0], np.logspace(-6.0, 6.0, grid_size - 2), [np.inf]))
    alpha = np.zeros(ts.size)
    beta = np.zeros(ts.size)
    with np.errstate(divide="ignore"):
        inv = 1.0 / (ts + 1.0)
    for i, wi in zip(inp._idx.astype(int), inp._wts):
        table = _cdf_table(int(i))
        k = np.floor(i - (i + 1) * inv).astype(np.int64)
        # the shift vanishes at t = inf
        k[-1] = i
        for kk, acc in ((k, alpha), (k + 1, beta)):
            vals = np.where(kk < 0, 0.0, table[np.clip(kk, 0, i)])
            vals = np.where(kk >= i, 1.0, vals)
            acc += wi * vals
    vals = _bound_expression(inp, epsilon, alpha, beta)
    return float(min(1.0, max(0.0, vals.max())))


def delta_s_curve(
    inp: AmplificationInput, epsilons: Sequence[float], workers: int | None = None
) -> list[PrivacyBound]:
    """delta_s at each epsilon, in input order; optionally on a thread pool."""
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda e: delta_s(inp, e), epsilons))
    return [delta_s(inp, e) for e in epsilons]


def epsilon_s(
    inp: AmplificationInput, delta_target: float, eps_hi: float | None = None
) -> PrivacyBound:
    """Smallest epsilon with delta_s(epsilon) <= delta_target.

    Bisection on [0, eps_hi] (default: the worst-case local epsilon) to an
    absolute tolerance of 1e-6.  If even eps_hi does not reach the target the
    result is eps_hi with ``amplified=False``.
    """
    if delta_target >= 1.0:
        return PrivacyBound(0.0, delta_s(inp, 0.0).delta, amplified=True)
    if delta_target <= 0.0:
        raise ValueError("delta_target must be positive")
    hi = eps_hi if eps_hi is not None else inp.epsilon1
    if hi is None:
        raise ValueError("eps_hi is required when the input carries no epsilon1")
    at_zero = delta_s(inp, 0.0)
    if at_zero.delta <= delta_target:
        return at_zero
    top = delta_s(inp, hi)
    if top.delta > delta_target:
        return PrivacyBound(hi, top.delta, top.t_epsilon, amplified=False)
    trace = [(0.0, at_zero.delta), (hi, top.delta)]
    lo = 0.0
    best = top
    while hi - lo > EPS_ABS_TOL:
        mid = 0.5 * (lo + hi)
        cur = delta_s(inp, mid)
        trace.append((mid, cur.delta))
        if cur.delta <= delta_target:
            hi, best = mid, cur
        else:
            lo = mid
    trace.sort()
    ds = [d for _, d in trace]
    if any(b > a * (1 + 1e-9) + 1e-300 for a, b in zip(ds, ds[1:])):
        raise NumericError("delta_s is not nonincreasing along the bisection trace")
    return best


def select_worst_user(specs: Sequence[MechanismSpec]) -> tuple[int, float, float]:
    """Index of the largest epsilon (ties: larger delta, then lower index)."""
    if not specs:
        raise ValueError("need at least one user")
    best = min(range(len(specs)), key=lambda k: (-specs[k].epsilon, -specs[k].delta, k))
    return best, specs[best].epsilon, specs[best].delta
