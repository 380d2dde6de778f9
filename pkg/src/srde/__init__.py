"""Dictionary-learning super-resolution toolkit.

Pipeline: bilinear upsample -> per-pixel coefficient prediction -> filter
assembly from a Gaussian/DoG bank -> tiled parallel filtering. Ships the
iterative LASSO bank compressor and a constraint-aware block-configuration
autotuner with a GP surrogate.
"""

from .autotune import (
    FeasibleSet,
    GpModel,
    TuneResult,
    exhaustive_tune,
    expected_improvement,
    feasible_configs,
    gp_fit,
    gp_predict,
    is_feasible,
    tune,
    warps_per_block,
)
from .dictionary import (
    Dictionary,
    FilterInfo,
    FootprintReport,
    apply_filters,
    assemble_filters,
    build_dictionary,
    communication_footprint,
    load_dictionary,
    save_dictionary,
)
from .engine import (
    BlockConfig,
    HardwareSpec,
    LatencyMeasurement,
    measure_latency,
    run_filtering,
    synthetic_cost,
)
from .formats import FormatError
from .imageio import load_image, save_image
from .metrics import psnr, ssim
from .predictor import (
    ConvLayer,
    PredictorWeights,
    load_weights,
    predict_coefficients,
    random_init,
    save_weights,
    scale_output_channels,
)
from .pruning import (
    PruneConfig,
    PruneTrace,
    RegressionProblem,
    SelectionVector,
    build_regression,
    fit_gamma,
    lasso,
    prune_dictionary,
    search_lambda,
)
from .rng import Rng
from .tensor import (
    ImageSpec,
    Tensor,
    bilinear_upsample,
    conv2d,
    degrade,
    extract_patches,
    load_tensor,
    pixel_shuffle,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "BlockConfig",
    "ConvLayer",
    "Dictionary",
    "FeasibleSet",
    "FilterInfo",
    "FootprintReport",
    "FormatError",
    "GpModel",
    "HardwareSpec",
    "ImageSpec",
    "LatencyMeasurement",
    "PredictorWeights",
    "PruneConfig",
    "PruneTrace",
    "RegressionProblem",
    "Rng",
    "SelectionVector",
    "Tensor",
    "TuneResult",
    "apply_filters",
    "assemble_filters",
    "bilinear_upsample",
    "build_dictionary",
    "build_regression",
    "communication_footprint",
    "conv2d",
    "degrade",
    "exhaustive_tune",
    "expected_improvement",
    "extract_patches",
    "feasible_configs",
    "fit_gamma",
    "gp_fit",
    "gp_predict",
    "is_feasible",
    "lasso",
    "load_dictionary",
    "load_image",
    "load_tensor",
    "load_weights",
    "measure_latency",
    "pixel_shuffle",
    "predict_coefficients",
    "prune_dictionary",
    "psnr",
    "random_init",
    "run_filtering",
    "save_dictionary",
    "save_image",
    "save_tensor",
    "save_weights",
    "scale_output_channels",
    "search_lambda",
    "ssim",
    "synthetic_cost",
    "tune",
    "warps_per_block",
]
