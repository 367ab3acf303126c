"""One-shot structured pruning as combinatorial subset selection over a
layer-wise quadratic reconstruction objective.

The public surface mirrors the pipeline: build an instance from
calibration activations (or load one from disk), run the schedule-driven
local search backed by incremental block-inverse updates, and check
anything against the brute-force oracle.
"""

__version__ = "0.1.0"

from .builders import (
    CalibrationBatch,
    ChainLayer,
    ChainResult,
    ConvSpec,
    build_attention,
    build_conv,
    build_dense,
    conv_forward,
    flatten_filter_bank,
    im2col,
    load_chain,
    prune_chain,
)
from .config import set_thread_budget, thread_budget
from .errors import (
    GroupIndexError,
    GroupStateError,
    InconsistentSignsError,
    NotPositiveDefiniteError,
    NumericalDriftError,
    OsscarError,
    ScheduleError,
    ShapeMismatchError,
    SingularBlockError,
    TooManySubsetsError,
)
from .linalg import cholesky, damp, extract_block, inverse_spd, symmetrize
from .matrixio import read_matrix, write_matrix_binary, write_matrix_csv
from .oracle import (
    OracleResult,
    brute_force,
    direction_test,
    gap_report,
    gap_suite,
    path_independence_suite,
    random_problem,
    sign_test,
    stream_rng,
)
from .problem import (
    GroupPartition,
    QuadraticProblem,
    expand_weights,
    load_problem,
    objective_at,
    reconstruction_loss,
    retained_indices,
    save_problem,
    solve_direct,
)
from .search import (
    PruneReport,
    SearchSchedule,
    compute_impacts,
    local_step,
    magnitude_prune,
    make_schedule,
    run_local_search,
)
from .updates import PruneState, init_state

__all__ = [name for name in dir() if not name.startswith("_")]
