"""CP approximation of third-order tensors by (proximal) alternating least squares."""
from .accel import AccelStep, accel_step, scalar_aitken
from .exceptions import NumericalFailure
from .solvers import (
    ALGORITHMS,
    ConvergenceTrace,
    IterRecord,
    LambdaSchedule,
    Problem,
    SolverConfig,
    als_sweep,
    rals_sweep,
    run,
    solve_substep,
)
from .tensor_core import (
    FactorSet,
    Tensor3,
    cp_reconstruct,
    fold,
    gradient_f,
    khatri_rao,
    matricize,
    random_cp_problem,
    read_tensor,
    residual_f,
    write_tensor,
)

__version__ = "0.1.0"
