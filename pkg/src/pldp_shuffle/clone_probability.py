"""Confounding probabilities from likelihood-ratio tests.

For the worst-case user the test is between R(x0) and R(x1); its type-I error
is the probability ``p1`` that a report of x0 looks like a report of x1.  For
every other user i the test is between R(x_i) and the pair {R(x0), R(x1)}; the
two rejection regions U0 and U1 split by which neighbour is more likely, and
``p_i`` is the smaller of the two masses.

All sets use strict inequalities, so a density tie on a set of positive
measure contributes nothing.  The delta failure allowance is taken off each
region mass as ``delta / 2`` and floored at zero.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr

from .errors import NumericError, UnsupportedOperation
from .mechanisms import (
    SYMMETRIC_KINDS,
    CalibratedMechanism,
    MechanismKind,
    interval_mass,
    log_density,
)

SCAN_HALF_WIDTH = 40.0  # in units of the widest noise scale
SCAN_CELLS = 4096
ROOT_XTOL = 1e-12
_REFINE_DEPTH = 4
_REFINE_FACTOR = 16


class PMode(str, enum.Enum):
    HYPOTHESIS_TEST = "hypothesis_test"
    RR_REDUCTION = "rr_reduction"


@dataclass(frozen=True)
class RejectionRegion:
    """Finite union of disjoint, sorted open intervals (endpoints may be +-inf)."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        prev = -math.inf
        for lo, hi in self.intervals:
            if not lo < hi or lo < prev:
                raise ValueError(f"intervals must be sorted, disjoint and nonempty: {self.intervals}")
            prev = hi

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, z: float) -> bool:
        return any(lo < z < hi for lo, hi in self.intervals)

    def mass(self, mech: CalibratedMechanism, location: float) -> float:
        """Probability that the noise centred at ``location`` lands in the region."""
        return math.fsum(interval_mass(mech, location, lo, hi) for lo, hi in self.intervals)


@dataclass(frozen=True)
class HypTestResult:
    p0: float
    p1_side: float

    @property
    def p(self) -> float:
        return min(self.p0, self.p1_side)


@dataclass(frozen=True, eq=False)
class CloneProbabilities:
    """``p1`` of the worst-case user and ``p_i`` of the n-1 others."""

    p1: float
    p_rest: np.ndarray

    def __post_init__(self):
        rest = np.asarray(self.p_rest, dtype=float)
        rest.setflags(write=False)
        object.__setattr__(self, "p_rest", rest)
        if not 0.0 <= self.p1 <= 0.5:
            raise ValueError(f"p1 must lie in [0, 1/2], got {self.p1}")
        if rest.size and (rest.min() < 0.0 or rest.max() > 0.5):
            raise ValueError("every p_i must lie in [0, 1/2]")

    @property
    def n(self) -> int:
        return self.p_rest.size + 1


def baseline_p_rr(epsilon: float) -> float:
    """Clone probability of the randomized-response reduction, 1/(1+e^eps)."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return float(expit(-epsilon))


def p_neighbor(mech1: CalibratedMechanism) -> float:
    """Type-I error of the likelihood-ratio test between R(x0) and R(x1)."""
    spec = mech1.spec
    if mech1.kind is MechanismKind.LAPLACE:
        return 0.5 * math.exp(-spec.sensitivity / (2.0 * mech1.scale))
    if mech1.kind is MechanismKind.GAUSSIAN:
        return max(0.0, float(ndtr(-spec.sensitivity / (2.0 * mech1.scale))) - spec.delta / 2.0)
    return max(0.0, mech1.scale - spec.delta / 2.0)


# --- density crossings -------------------------------------------------------

def _laplace_crossings(mu_a, b_a, mu_b, b_b):
    """Zeros of log f_a - log f_b for two Laplace densities (piecewise linear)."""
    knots = sorted({mu_a, mu_b})
    edges = [-math.inf, *knots, math.inf]
    c = math.log(b_b / b_a)
    roots = []
    for left, right in zip(edges[:-1], edges[1:]):
        zref = (left + right) / 2 if math.isfinite(left + right) else (
            right - 1.0 if math.isfinite(right) else left + 1.0)
        sa = 1.0 if zref > mu_a else -1.0
        sb = 1.0 if zref > mu_b else -1.0
        slope = -sa / b_a + sb / b_b
        intercept = c + sa * mu_a / b_a - sb * mu_b / b_b
        if slope != 0.0:
            z = -intercept / slope
            if left <= z <= right:
                roots.append(z)
    return roots + knots


def _gaussian_crossings(mu_a, s_a, mu_b, s_b):
    """Zeros of log f_a - log f_b for two normal densities (a quadratic)."""
    qa = 0.5 / s_b**2 - 0.5 / s_a**2
    qb = mu_a / s_a**2 - mu_b / s_b**2
    qc = math.log(s_b / s_a) - 0.5 * mu_a**2 / s_a**2 + 0.5 * mu_b**2 / s_b**2
    if qa == 0.0:
        return [-qc / qb] if qb != 0.0 else []
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return []
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    roots = [q / qa]
    if q != 0.0:
        roots.append(qc / q)
    return roots


def _analytic_crossings(ma, loc_a, mb, loc_b):
    if ma.kind is MechanismKind.LAPLACE:
        return _laplace_crossings(loc_a, ma.scale, loc_b, mb.scale)
    return _gaussian_crossings(loc_a, ma.scale, loc_b, mb.scale)


def _scan_crossings(g, lo, hi, cells=SCAN_CELLS):
    """Sign changes of ``g`` on an adaptive grid, refined with brentq."""
    roots = []

    def scan(a, b, m, depth):
        z = np.linspace(a, b, m + 1)
        v = g(z)
        s = np.sign(v)
        for k in np.flatnonzero(s[:-1] * s[1:] < 0):
            try:
                roots.append(brentq(g, z[k], z[k + 1], xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps))
            except (ValueError, RuntimeError) as exc:
                raise NumericError(f"root refinement failed on [{z[k]}, {z[k + 1]}]") from exc
        roots.extend(z[s == 0].tolist())
        if depth >= _REFINE_DEPTH or m < 3:
            return
        # a local extremum of |g| that does not change sign may hide a pair of
        # crossings inside one cell: zoom in on it
        av = np.abs(v)
        interior = np.flatnonzero((av[1:-1] < av[:-2]) & (av[1:-1] < av[2:]) & (s[:-2] == s[2:]))
        for k in interior + 1:
            scan(z[k - 1], z[k + 1], _REFINE_FACTOR, depth + 1)

    scan(lo, hi, cells, 0)
    return roots


def _classify(points, predicate):
    """Turn breakpoints and a pointwise predicate into merged open intervals."""
    pts = np.unique(np.asarray([p for p in points if math.isfinite(p)], dtype=float))
    if pts.size == 0:
        return RejectionRegion(((-math.inf, math.inf),)) if predicate(0.0) else RejectionRegion()
    span = max(1.0, float(pts[-1] - pts[0]))
    reps = np.concatenate(([pts[0] - span], (pts[:-1] + pts[1:]) / 2, [pts[-1] + span]))
    edges = np.concatenate(([-math.inf], pts, [math.inf]))
    out = []
    for k, z in enumerate(reps):
        if not predicate(z):
            continue
        lo, hi = float(edges[k]), float(edges[k + 1])
        if out and out[-1][1] == lo:
            out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return RejectionRegion(tuple(out))


def _check_continuous(*mechs):
    for m in mechs:
        if not m.is_continuous:
            raise UnsupportedOperation(f"{m.kind.value} is discrete; regions are not interval unions")


def compute_regions(
    mech_i: CalibratedMechanism,
    x_i: float,
    mech1: CalibratedMechanism,
    method: str = "auto",
) -> tuple[RejectionRegion, RejectionRegion]:
    """Rejection regions U0 and U1 of user i against the neighbouring pair.

    U0 = {z : f_i(z) < f_0(z) and f_1(z) < f_0(z)} and U1 symmetrically, where
    f_0, f_1 are the densities of the worst-case user at 0 and ``sensitivity``.

    ``method`` is ``"analytic"`` (closed-form crossings, same family only),
    ``"scan"`` (grid sign-scan plus root refinement) or ``"auto"``.
    """
    _check_continuous(mech_i, mech1)
    x1 = mech1.spec.sensitivity
    if not -1e-12 * x1 <= x_i <= x1 * (1 + 1e-12):
        raise ValueError(f"x_i must lie in [0, {x1}], got {x_i}")
    if method == "auto":
        method = "analytic" if mech_i.kind is mech1.kind else "scan"

    lf_i = lambda z: log_density(mech_i, x_i, z)  # noqa: E731
    lf_0 = lambda z: log_density(mech1, 0.0, z)  # noqa: E731
    lf_1 = lambda z: log_density(mech1, x1, z)  # noqa: E731

    if method == "analytic":
        if mech_i.kind is not mech1.kind:
            raise UnsupportedOperation("analytic crossings need both users in the same family")
        points = (
            _analytic_crossings(mech_i, x_i, mech1, 0.0)
            + _analytic_crossings(mech_i, x_i, mech1, x1)
            + _analytic_crossings(mech1, 0.0, mech1, x1)
        )
    elif method == "scan":
        width = SCAN_HALF_WIDTH * max(mech_i.scale, mech1.scale)
        lo, hi = min(0.0, x_i) - width, max(x1, x_i) + width
        points = []
        for g in (
            lambda z: lf_0(z) - lf_i(z),
            lambda z: lf_1(z) - lf_i(z),
            lambda z: lf_1(z) - lf_0(z),
        ):
            points += _scan_crossings(g, lo, hi)
    else:
        raise ValueError(f"unknown method {method!r}")

    u0 = _classify(points, lambda z: lf_i(z) < lf_0(z) and lf_1(z) < lf_0(z))
    u1 = _classify(points, lambda z: lf_i(z) < lf_1(z) and lf_0(z) < lf_1(z))
    return u0, u1


def neighbor_region(mech1: CalibratedMechanism, method: str = "auto") -> RejectionRegion:
    """S = {z : f_0(z) < f_1(z)}, the rejection region of the worst-case test."""
    _check_continuous(mech1)
    x1 = mech1.spec.sensitivity
    lf_0 = lambda z: log_density(mech1, 0.0, z)  # noqa: E731
    lf_1 = lambda z: log_density(mech1, x1, z)  # noqa: E731
    if method in ("auto", "analytic"):
        points = _analytic_crossings(mech1, 0.0, mech1, x1)
    else:
        width = SCAN_HALF_WIDTH * mech1.scale
        points = _scan_crossings(lambda z: lf_1(z) - lf_0(z), -width, x1 + width)
    return _classify(points, lambda z: lf_0(z) < lf_1(z))


def _p_rest_rr(mech_i, x_i, mech1) -> HypTestResult:
    # binary randomized response over {0, sensitivity}
    x1 = mech1.spec.sensitivity
    if x_i not in (0.0, x1):
        raise ValueError("randomized response only reports the two neighbouring points")
    q_i, q_1 = mech_i.scale, mech1.scale
    # output distributions over {0, 1}
    f_i = (1 - q_i, q_i) if x_i == 0.0 else (q_i, 1 - q_i)
    f_0 = (1 - q_1, q_1)
    f_1 = (q_1, 1 - q_1)
    m0 = sum(f_i[z] for z in (0, 1) if f_i[z] < f_0[z] and f_1[z] < f_0[z])
    m1 = sum(f_i[z] for z in (0, 1) if f_i[z] < f_1[z] and f_0[z] < f_1[z])
    half = mech_i.spec.delta / 2.0
    return HypTestResult(max(0.0, m0 - half), max(0.0, m1 - half))


def p_rest(
    mech_i: CalibratedMechanism,
    x_i: float,
    mech1: CalibratedMechanism,
    method: str = "auto",
) -> HypTestResult:
    """Type-I errors of user i on the x0 side and the x1 side."""
    if mech_i.kind is MechanismKind.RANDOMIZED_RESPONSE and mech1.kind is MechanismKind.RANDOMIZED_RESPONSE:
        return _p_rest_rr(mech_i, x_i, mech1)
    u0, u1 = compute_regions(mech_i, x_i, mech1, method)
    half = mech_i.spec.delta / 2.0
    return HypTestResult(
        max(0.0, u0.mass(mech_i, x_i) - half),
        max(0.0, u1.mass(mech_i, x_i) - half),
    )


def worst_case_p(mech_i: CalibratedMechanism, mech1: CalibratedMechanism, method: str = "auto") -> float:
    """Smallest ``p_i`` over the two end points x_i in {x0, x1}."""
    if mech_i.kind in SYMMETRIC_KINDS and mech1.kind in SYMMETRIC_KINDS:
        # mirror symmetry about sensitivity/2 makes both end points equal
        return p_rest(mech_i, 0.0, mech1, method).p
    x1 = mech1.spec.sensitivity
    return min(p_rest(mech_i, 0.0, mech1, method).p, p_rest(mech_i, x1, mech1, method).p)


def _worst_case_chunk(args):
    mechs, mech1 = args
    return [worst_case_p(m, mech1) for m in mechs]


def clone_probabilities(
    mechs: Sequence[CalibratedMechanism],
    worst_index: int,
    p_mode: PMode | str = PMode.HYPOTHESIS_TEST,
    workers: int | None = None,
) -> CloneProbabilities:
    """``p1`` and the ``p_i`` of all other users for one population.

    Identical mechanisms are evaluated once.  With ``workers > 1`` the distinct
    mechanisms are split across worker processes.
    """
    p_mode = PMode(p_mode)
    mech1 = mechs[worst_index]
    rest = [m for k, m in enumerate(mechs) if k != worst_index]
    if p_mode is PMode.RR_REDUCTION:
        return CloneProbabilities(
            baseline_p_rr(mech1.spec.epsilon),
            np.array([baseline_p_rr(m.spec.epsilon) for m in rest]),
        )

    unique = list(dict.fromkeys(rest))
    if workers and workers > 1 and len(unique) > 256:
        chunks = [unique[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_worst_case_chunk, [(c, mech1) for c in chunks]))
        table = {m: p for c, ps in zip(chunks, parts) for m, p in zip(c, ps)}
    else:
        table = {m: worst_case_p(m, mech1) for m in unique}
    return CloneProbabilities(p_neighbor(mech1), np.array([table[m] for m in rest], dtype=float))
