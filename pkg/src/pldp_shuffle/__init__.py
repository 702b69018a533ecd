"""Privacy accounting for the shuffle model with personalised local DP."""
from .accountant import (
    AmplificationInput, PrivacyBound, TradeoffPoint, alpha_of_t, beta_of_t, delta_s, delta_s_curve,
    delta_s_dual, epsilon_s, f_s_at, l_of_t, select_worst_user, t_epsilon, tradeoff_at,
)
from .clone_count import CloneCountDistribution, binom_half_cdf, binom_half_pmf, poisson_binomial
from .clone_probability import (
    CloneProbabilities, PMode, RejectionRegion, baseline_p_rr, clone_probabilities, compute_regions,
    p_neighbor, p_rest, worst_case_p,
)
from .errors import (
    AccountingError, CalibrationError, ConfigError, NumericError, OracleLimitError, UnsupportedOperation,
)
from .mechanisms import CalibratedMechanism, MechanismKind, MechanismSpec, calibrate

__version__ = "0.1.0"
