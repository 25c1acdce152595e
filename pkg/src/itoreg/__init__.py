"""itoreg: stochastic calculus via regularization, at Monte Carlo desk scale.

Covariation and forward integrals as eps-regularized grid quadratures,
weak Dirichlet path machinery, stochastic flows by local characteristics,
and numerical verification of the C^{0,1} decomposition of F(t, X_t)
including every remainder term of its proof.
"""

from .errors import (
    AdaptednessError,
    CapabilityError,
    ConfigurationError,
    ContractViolation,
    DataError,
    EvaluationError,
    ItoregError,
    SimulationError,
)
from .flowkit import (
    CATALOG_NAMES,
    PROFILES,
    AnalyticForms,
    DeclaredBounds,
    DriverView,
    LocalCharacteristics,
    Profile,
    SeparableTerm,
    StochasticFlow,
    as_driver_view,
    builtin_flow,
    combine_flows,
    evaluate_flow,
    evaluate_flow_along,
    expression_flow,
    flow_dx_along,
    flow_from_separable,
    flow_spatial_derivative,
    make_flow,
    parse_profile,
    sep_constant,
    sep_space,
    sep_time,
    sep_zero,
    spot_check_holder,
    spot_check_integrability,
    substitute_random_point,
    window_integrals,
)
from .pathkit import (
    BrownianMotion,
    Composite,
    FiniteVariation,
    ItoProcess,
    PathBundle,
    SamplePath,
    TimeGrid,
    ZeroEnergyCandidate,
    build_weak_dirichlet,
    deterministic_path,
    ensemble_seeds,
    extend_constant,
    nodewise_sum,
    realized_qv,
    simulate_brownian,
    simulate_brownian_ensemble,
    simulate_ito_process,
    simulate_weak_dirichlet,
    simulate_weak_dirichlet_ensemble,
)
from .proofterms import (
    MaoBoundReport,
    ProofTermSet,
    compute_proof_terms,
    lemma_convergence_check,
    mao_bound_check,
    mao_constant,
    ytilde_l1_samples,
)
from .regint import (
    RegularizationEstimate,
    eps_covariation,
    eps_covariation_curve,
    eps_forward_integral,
    eps_forward_integral_curve,
    estimates_to_csv,
    ito_integral_curve,
    ito_integral_oracle,
    weighted_eps_covariation,
    weighted_eps_covariation_curve,
)
from .ucpstats import (
    MomentEstimate,
    TightnessReport,
    UcpEstimate,
    UcpSeries,
    boundedness_in_probability,
    estimate_ucp_distance,
    moment_estimate,
    ucp_verdict,
)
from .ventzell import (
    CorollaryReport,
    DecompositionReport,
    ExplicitTerms,
    assemble_rhs_terms,
    ensemble_mean_curve,
    explicit_bx_terms,
    martingale_corollary_check,
    spot_check_assumptions,
    stieltjes_fx_da,
    test_martingale,
    verify_decomposition,
    zero_energy_check,
)

__version__ = "0.1.0"
