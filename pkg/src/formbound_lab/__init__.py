"""Numerical lab for stochastic transport with form-bounded singular drift."""

from .backend import active_backend, force_backend, set_backend
from .bump import GaussianBump
from .drift import (
    DriftField,
    FormBoundCertificate,
    WeakLdEstimate,
    certificate_sum,
    drift_from_config,
    estimate_form_bound_numeric,
    hardy_certificate,
    ld_split_certificate,
    load_grid_drift,
    make_annulus_log_drift,
    make_grid_sampled_drift,
    make_hardy_drift,
    make_separable_drift,
    save_grid_drift,
    strichartz_certificate,
    sum_drifts,
    unit_ball_volume,
    weak_ld_norm,
    zero_drift,
)
from .flowsim import (
    FlowEnsemble,
    MCEstimate,
    PathConfig,
    criticality_probe,
    invert_flow,
    mc_gradient_moment,
    mc_second_moment,
    simulate_flow,
    simulate_paths,
    transition_bracket,
)
from .grid import BoxGrid
from .momentpde import (
    AdmissibilityError,
    CheckReport,
    SolverConfig,
    ThresholdSet,
    check_dual_weighted_bound,
    check_e1,
    check_gradient_bound,
    solve_dual_continuity_moment,
    solve_gradient_moment_system_q1,
    solve_second_moment,
    thresholds,
)
from .regularize import (
    MollifiedDrift,
    build_mollified_sequence,
    choose_epsilon,
    heat_smooth,
    truncate_drift,
)
from .weights import WeightParams, grad_rho_ratio_bound, rho, weighted_inner, weighted_lp_norm

__version__ = "0.1.0"
