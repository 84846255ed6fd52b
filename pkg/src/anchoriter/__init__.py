"""Anchored operator iteration: nonexpansive primitives, drift-projection envelopes,
event scheduling, attention-layer contraction certificates and a nonexpansive
register machine."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .errors import (
    AnchorError,
    CertificationPreconditionError,
    DimensionError,
    EncodingError,
    FixedPointError,
    InfeasibleError,
    NestingError,
    NonFiniteError,
    NotAProjectionError,
    ProgramError,
)
from .operators import (
    AffineMap,
    AffineSet,
    Averaged,
    Box,
    BoxClamp,
    Composite,
    Constant,
    Permutation,
    Product,
    Projection,
    RadialRetraction,
    anchored_implication,
    apply,
    box_clamp,
    empirical_modulus,
    operator_from_dict,
    project_affine,
    radial_retract,
)
from .envelopes import (
    EventSchedule,
    block_products,
    drift_block_lambda,
    envelope_stepwise,
    envelope_uniform_gap,
    envelope_variable,
    km_modulus,
)
from .drift import (
    EventBlock,
    RunConfig,
    approx_nesting_run,
    check_nested,
    event_bounds,
    nested_projection_run,
    run,
    stepwise_bounds,
    verify_envelope,
)
from .scheduling import (
    BlockLawSpec,
    GapLaw,
    MuLaw,
    RhoLaw,
    adversarial_schedule,
    mc_sweep,
    run_sim,
    sample_block_log_tau,
    slln_classify,
)
from .attention import (
    HeadSpec,
    LayerSpec,
    LinearHead,
    SoftmaxHead,
    certify_layer,
    jvp_power_iteration,
    layer_empirical_modulus,
    overlap_index,
    softmax,
    softmax_jacobian,
    softmax_lip_probe,
    spec_norm,
)
from .mc import (
    AffineStep,
    ConstantWrite,
    Encoding,
    Guarded,
    MCState,
    Permute,
    Program,
    Readout,
    Translate,
    complexity_audit,
    execute,
    guarded_block,
    perturbed_execute,
    realize_trace,
    run_state,
)
