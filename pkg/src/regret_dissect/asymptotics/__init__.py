"""Population-level theory: regret floors, sandwich matrices, limit laws and bounds."""

from .population import (
    AsymptoticSummary,
    HessianEstimate,
    Kappas,
    M1Matrices,
    TauSpectrum,
    analyze,
    b0_measure,
    decision_gradient,
    decision_value,
    hess_v0_of_omega_theta,
    kappas_and_delta,
    m1_matrices,
    psd_sqrt,
    tau_spectrum,
    theta_kl,
    theta_star,
)
from .bounds import (
    BoundResult,
    GaussianTailBounds,
    classify_regime,
    eto_first_order_error,
    gaussian_tail_bounds,
    generalization_bound,
    ieo_first_order_tail,
    ieo_high_probability_bound,
    lower_bound_D,
    second_order_error,
    upper_bound_D,
)
from .dominance import DominanceCheck, DominanceReport, dominance_tests
from .mixtures import (
    ChiSqMixture,
    TailProbability,
    coupled_second_order_draws,
    interval_probability,
    mixture_cdf,
    mixture_quantile,
    mixture_tail,
    quadratic_form_decomposition,
    quadratic_form_weights,
    second_order_limits,
)
