"""Brute-force ground truth for small populations.

The shuffled view is reduced to the pair (a, b) of reports attributed to x0
and x1.  With C clones among the other users and A ~ Bin(C, 1/2),

    P0 = (A + 1, C - A),   Q0 = (A, C - A + 1),
    P  = (1 - w) P0 + w Q0,   Q = (1 - w) Q0 + w P0.

Exact enumeration is polynomial in n, but it is guarded at n <= 20 since it
only exists to check the accountant.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .clone_count import CloneCountDistribution, binom_half_pmf, log_binom_half_pmf
from .errors import OracleLimitError

MAX_EXACT_N = 20


@dataclass(frozen=True, eq=False)
class JointCountDistribution:
    atoms: Mapping[tuple[int, int], float]

    def __post_init__(self):
        atoms = dict(self.atoms)
        if any(m < 0 for m in atoms.values()):
            raise ValueError("masses must be nonnegative")
        total = math.fsum(atoms.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"total mass {total!r} is not 1")
        object.__setattr__(self, "atoms", MappingProxyType(atoms))

    def __getitem__(self, key: tuple[int, int]) -> float:
        return self.atoms.get(key, 0.0)

    def swapped(self) -> "JointCountDistribution":
        return JointCountDistribution({(b, a): m for (a, b), m in self.atoms.items()})


def exact_mixture(
    counts: CloneCountDistribution, w: float
) -> tuple[JointCountDistribution, JointCountDistribution]:
    """Enumerate the clone-count mixtures P and Q."""
    n = len(counts)
    if n > MAX_EXACT_N:
        raise OracleLimitError(f"exact enumeration is limited to n <= {MAX_EXACT_N}, got {n}")
    p0 = defaultdict(float)
    q0 = defaultdict(float)
    for c, wc in enumerate(counts.weights):
        if wc == 0.0:
            continue
        for a in range(c + 1):
            m = wc * binom_half_pmf(c, a)
            p0[(a + 1, c - a)] += m
            q0[(a, c - a + 1)] += m
    keys = set(p0) | set(q0)
    P = {k: (1 - w) * p0[k] + w * q0[k] for k in keys}
    Q = {k: (1 - w) * q0[k] + w * p0[k] for k in keys}
    return JointCountDistribution(P), JointCountDistribution(Q)


def hockey_stick(P: JointCountDistribution, Q: JointCountDistribution, epsilon: float) -> float:
    """sum over atoms of max(0, P - e^eps Q)."""
    scale = math.exp(epsilon)
    keys = set(P.atoms) | set(Q.atoms)
    return min(1.0, math.fsum(max(0.0, P[k] - scale * Q[k]) for k in keys))


def total_variation(P: JointCountDistribution, Q: JointCountDistribution) -> float:
    keys = set(P.atoms) | set(Q.atoms)
    return 0.5 * math.fsum(abs(P[k] - Q[k]) for k in keys)


def monte_carlo_divergence(
    counts: CloneCountDistribution,
    w: float,
    epsilon: float,
    samples: int,
    seed: int,
) -> tuple[float, float]:
    """Plug-in estimate of the hockey-stick divergence, with its standard error.

    Draws s ~ P and averages max(0, 1 - e^eps Q(s)/P(s)); both masses are known
    in closed form, so this scales to populations far beyond the exact guard.
    """
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    rng = np.random.Generator(np.random.Philox(seed))
    c = rng.choice(len(counts), size=samples, p=counts.weights)
    a = rng.binomial(c, 0.5)
    from_q0 = rng.random(samples) < w
    # reports attributed to x0 under P
    x = np.where(from_q0, a, a + 1)
    lf_prev = log_binom_half_pmf(c, x - 1)  # P0 mass of the atom
    lf_here = log_binom_half_pmf(c, x)  # Q0 mass of the atom
    # ratio Q/P = ((1-w) f(x) + w f(x-1)) / ((1-w) f(x-1) + w f(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.logaddexp(np.log1p(-w) + lf_here, np.log(w) + lf_prev if w > 0 else -np.inf)
        den = np.logaddexp(np.log1p(-w) + lf_prev, np.log(w) + lf_here if w > 0 else -np.inf)
        vals = np.maximum(0.0, -np.expm1(epsilon + num - den))
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(samples))
    return est, err
