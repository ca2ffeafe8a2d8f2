"""Flow maps of rough velocity fields on bounded domains.

Regularised (mollified) flows, linear transport by characteristics and by
upwinding, and Monte Carlo checks of the Liouville and Reynolds transport
identities for co-moving volumes.
"""
from .geometry import (
    Domain,
    Enclosure,
    MeasurableSet,
    MeasureEstimate,
    ball,
    ball_set,
    box,
    box_set,
    contains,
    empty_set,
    estimate_measure,
    full_set,
    sample_uniform,
    unit_ball,
)
from .fields import (
    SCENARIOS,
    MollifiedField,
    Mollifier,
    VelocityField,
    contraction,
    div_l1_linf,
    eval_zero_extended,
    mollifier_normalizer,
    mollify,
    rotation,
    rough_shear,
    zero_field,
)
from .flow import (
    FlowEvaluator,
    TrajectoryEscape,
    TrajectoryRecord,
    advect,
    flow_map,
    group_defect,
    integral_equation_residual,
    leak_measure,
    semigroup_defect,
)
from .transport import (
    GridSpec,
    GridFunction,
    InitialDatum,
    TransportSolution,
    commutator_field,
    l2_identity_residual,
    rho_convergence_study,
    solve_eulerian,
    solve_lagrangian,
    weak_residual,
)
from .reynolds import (
    DensityFunction,
    ReynoldsReport,
    change_of_variables_check,
    measure_image,
    measure_image_jacobian,
    measure_preimage,
    rtt_density_residual,
    rtt_limit_study,
    rtt_measure_residual,
)

__version__ = "0.1.0"
