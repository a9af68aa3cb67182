"""Rank-R CP decomposition of third-order tensors.

Solver library and CLI built around a damped normal-equation method
that reuses each Jacobian for two solves per iteration, with tooling
for RGB image compression experiments.
"""

from .errors import (
    CapacityError,
    CplmError,
    DimensionError,
    DivergenceError,
    FormatError,
    SolveFailure,
)
from .tensor import (
    DenseTensor3,
    frobenius_norm,
    linear_index,
    read_tns3,
    sub,
    write_tns3,
)
from .model import (
    CompressionReport,
    CpModel,
    ParamVector,
    compression_percent,
    cp_reconstruct,
    pack,
    read_cpd3,
    residual,
    unpack,
    write_cpd3,
)
from .jacobian import (
    NormalSystem,
    SparseJacobian,
    build_jacobian,
    normal_system,
    numerical_rank,
)
from .optimizer import (
    CpObjective,
    IterationRecord,
    LmConfig,
    LmState,
    Trace,
    classic_lm_iterate,
    gain_ratio,
    initial_state,
    modified_lm_iterate,
    run,
    solve_damped,
)
from .image import (
    RgbImage,
    image_to_tensor,
    psnr,
    read_image,
    tensor_to_image,
    write_image,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CompressionReport",
    "CpModel",
    "CplmError",
    "CpObjective",
    "DenseTensor3",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "IterationRecord",
    "LmConfig",
    "LmState",
    "NormalSystem",
    "ParamVector",
    "RgbImage",
    "SolveFailure",
    "SparseJacobian",
    "Trace",
    "build_jacobian",
    "classic_lm_iterate",
    "compression_percent",
    "cp_reconstruct",
    "frobenius_norm",
    "gain_ratio",
    "image_to_tensor",
    "initial_state",
    "linear_index",
    "modified_lm_iterate",
    "normal_system",
    "numerical_rank",
    "pack",
    "psnr",
    "read_cpd3",
    "read_image",
    "read_tns3",
    "residual",
    "run",
    "solve_damped",
    "sub",
    "tensor_to_image",
    "unpack",
    "write_cpd3",
    "write_image",
    "write_tns3",
    "__version__",
]
