"""entrapsim: bearing-based cooperative target-entrapping control simulator.

Leaders follow designed trajectories around a moving target; followers
sense only bearings, bearing rates, and relative velocities of their
neighbors, estimate inter-agent distances from that, and run a
signum-robust stress-matrix controller.  The package verifies the
sufficient gain conditions, excitation conditions, stability envelopes,
and collision-avoidance certificate on reproducible scenarios.
"""

from .geometry import (
    CoincidentAgents,
    GeometryError,
    NonpositiveDistance,
    bearing,
    bearing_rate,
    perp,
    unit,
    vec2,
)
from .formation import (
    AffinePose,
    Configuration,
    DegenerateLeaderConfiguration,
    DimensionMismatch,
    SingularSystem,
    StressMatrix,
    affine_fit,
    desired_followers_affine,
    desired_followers_stress,
    desired_relative_velocity,
    formation_center,
    synthesize_stress,
    validate_assumption1,
)
from .sensing import (
    EdgeObservation,
    EstimatorState,
    PEStatus,
    PEWindow,
    displacement_estimate,
    estimator_rhs,
    pe_estimator_update,
    pe_leader_update,
)
from .control import (
    AvoidanceCertificate,
    ControlGains,
    GainConditionViolated,
    InvalidClearance,
    NoNeighbors,
    StabilityCertificate,
    avoidance_certificate,
    control_input,
    signum,
    stability_certificate,
    sup_follower_accel,
    validate_gains,
)
from .engine import (
    CircularLeaderGenerator,
    CollisionDetected,
    NumericalBlowup,
    RunResult,
    StaticLeaderGenerator,
    Trace,
    UncertaintyModel,
    WorldState,
    ZeroOffset,
    collision_monitor,
    compile_scenario,
    initial_world,
    leader_excitation_report,
    leader_generator_circular,
    min_desired_gap,
    observations,
    run,
    step,
)
from .scenario import (
    ParseError,
    Scenario,
    bundled_scenario_path,
    load_scenario,
    save_scenario,
    scenario_from_dict,
)

__version__ = "0.1.0"
