"""Nash equilibria of extensive-form games via logit-response path following.

The solver compiles a finite perfect-recall game tree into its sequence
form, embeds the logit quantal-response conditions as a smooth system in
transformed variables, and follows the solution curve from a closed-form
start at full smoothing down to the Nash limit with a pseudo-arclength
predictor-corrector.
"""

from qrepath.game_model import (
    GameFormatError,
    GameTree,
    InfosetId,
    PerfectRecallError,
    check_perfect_recall,
    load_game,
    parse_game,
    record,
    serialize_game,
)
from qrepath.sequence_form import (
    MixedProfile,
    RealizationProfile,
    SequenceSpace,
    best_response_value,
    compile,
    expected_payoff,
    mixed_of,
    realization_of,
    seq_marginal_payoff,
)
from qrepath.normal_form_oracle import (
    NormalForm,
    build_normal_form,
    logit_response,
    nash_gap,
    solve_logit_qre,
)
from qrepath.qre_system import (
    MultiplierSet,
    QreInstance,
    recover_multipliers,
    recursive_ge,
    residual_gamma_sys,
    sigma_e,
    solve_fixed_t,
)
from qrepath.homotopy_tracer import (
    PathPoint,
    TraceResult,
    TracerConfig,
    TransformParams,
    export_path,
    jacobian_transformed,
    phi,
    phi_prime,
    psi,
    residual_transformed,
    run_trace,
    start_point,
    trace,
)

__version__ = "0.1.0"
