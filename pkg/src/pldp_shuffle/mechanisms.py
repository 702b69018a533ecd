"""Local randomizers: parameters, noise calibration and exact densities.

The neighbouring pair of the worst-case user is fixed at ``x0 = 0`` and
``x1 = sensitivity``; every other user sits somewhere in between.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from .errors import CalibrationError, ConfigError, NumericError, UnsupportedOperation

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# relative bracket for the Gaussian sigma search
SIGMA_BRACKET = (1e-6, 1e6)


class MechanismKind(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    RANDOMIZED_RESPONSE = "randomized_response"


CONTINUOUS_KINDS = frozenset({MechanismKind.LAPLACE, MechanismKind.GAUSSIAN})
# noise families whose density is mirror-symmetric about the location
SYMMETRIC_KINDS = frozenset(MechanismKind)


@dataclass(frozen=True)
class MechanismSpec:
    """A local randomizer family with its (epsilon, delta) target."""

    kind: MechanismKind
    epsilon: float
    delta: float = 0.0
    sensitivity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        if not self.epsilon > 0 or not math.isfinite(self.epsilon):
            raise ConfigError("epsilon", f"must be positive and finite, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError("delta", f"must lie in [0, 1), got {self.delta}")
        if not self.sensitivity > 0:
            raise ConfigError("sensitivity", f"must be positive, got {self.sensitivity}")
        if self.kind is MechanismKind.LAPLACE and self.delta != 0.0:
            raise ConfigError("delta", "the Laplace mechanism is pure DP; delta must be 0")


@dataclass(frozen=True)
class CalibratedMechanism:
    """A mechanism spec together with its noise scale.

    ``scale`` is the Laplace scale b, the Gaussian standard deviation, or the
    randomized-response flip probability depending on ``spec.kind``.
    """

    spec: MechanismSpec
    scale: float

    @property
    def kind(self) -> MechanismKind:
        return self.spec.kind

    @property
    def is_continuous(self) -> bool:
        return self.spec.kind in CONTINUOUS_KINDS


def gaussian_dp_delta(sigma: float, epsilon: float, sensitivity: float = 1.0) -> float:
    """Exact delta(epsilon) of the Gaussian mechanism with noise std ``sigma``.

    delta = Phi(D/(2s) - e*s/D) - exp(e) * Phi(-D/(2s) - e*s/D)

    The difference is formed in log space so that deltas far below 1e-10 keep
    their relative accuracy.
    """
    if sigma <= 0 or epsilon < 0 or sensitivity <= 0:
        raise ValueError("sigma and sensitivity must be positive and epsilon nonnegative")
    u = sensitivity / (2.0 * sigma)
    v = epsilon * sigma / sensitivity
    log_a = float(log_ndtr(u - v))
    log_b = float(log_ndtr(-u - v))
    if log_a == -math.inf:
        return 0.0
    gap = epsilon + log_b - log_a
    if gap >= 0.0:
        return 0.0
    return min(1.0, math.exp(log_a) * -math.expm1(gap))


def _calibrate_gaussian(spec: MechanismSpec) -> float:
    if spec.delta <= 0.0:
        raise CalibrationError("the Gaussian mechanism needs delta > 0")
    target = spec.delta
    lo = SIGMA_BRACKET[0] * spec.sensitivity
    hi = SIGMA_BRACKET[1] * spec.sensitivity

    def excess(s):
        return gaussian_dp_delta(s, spec.epsilon, spec.sensitivity) - target

    if excess(lo) < 0.0 or excess(hi) > 0.0:
        raise NumericError(
            f"sigma bracket [{lo:g}, {hi:g}] does not contain a solution for "
            f"epsilon={spec.epsilon}, delta={target}"
        )
    # bisect in log(sigma) until the bracket collapses to adjacent floats
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        if not lo < mid < hi:
            break
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def calibrate(spec: MechanismSpec) -> CalibratedMechanism:
    """Pick a noise scale achieving ``(spec.epsilon, spec.delta)``-LDP."""
    if spec.kind is MechanismKind.LAPLACE:
        scale = spec.sensitivity / spec.epsilon
    elif spec.kind is MechanismKind.GAUSSIAN:
        scale = _calibrate_gaussian(spec)
    else:
        scale = float(expit(-spec.epsilon))
    return CalibratedMechanism(spec, scale)


def _require_continuous(mech: CalibratedMechanism) -> None:
    if not mech.is_continuous:
        raise UnsupportedOperation(f"{mech.kind.value} has no density; it is a discrete mechanism")


def log_density(mech: CalibratedMechanism, location, z):
    _require_continuous(mech)
    z = np.asarray(z, dtype=float)
    b = mech.scale
    if mech.kind is MechanismKind.LAPLACE:
        out = -math.log(2.0 * b) - np.abs(z - location) / b
    else:
        out = -math.log(b) - _LOG_SQRT_2PI - 0.5 * ((z - location) / b) ** 2
    return out[()] if out.ndim == 0 else out


def density(mech: CalibratedMechanism, location, z):
    """Noise density centred at ``location``, evaluated at ``z``."""
    return np.exp(log_density(mech, location, z))


def cdf(mech: CalibratedMechanism, location, z):
    _require_continuous(mech)
    u = (np.asarray(z, dtype=float) - location) / mech.scale
    if mech.kind is MechanismKind.LAPLACE:
        out = np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0.0)), -0.5 * np.expm1(
            -np.maximum(u, 0.0)) + 0.5)
    else:
        out = ndtr(u)
    return out[()] if np.ndim(out) == 0 else out


def sf(mech: CalibratedMechanism, location, z):
    """Survival function 1 - cdf, accurate in the upper tail."""
    return cdf(mech, -location, -np.asarray(z, dtype=float))


def interval_mass(mech: CalibratedMechanism, location: float, lo: float, hi: float) -> float:
    """Probability of the open interval (lo, hi) under the noise at ``location``.

    Uses the tail on the far side of the location to avoid cancellation.
    """
    if hi <= lo:
        return 0.0
    if hi <= location:
        return float(cdf(mech, location, hi) - cdf(mech, location, lo))
    if lo >= location:
        return float(sf(mech, location, lo) - sf(mech, location, hi))
    return float(1.0 - cdf(mech, location, lo) - sf(mech, location, hi))
