from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version(__name__)
except PackageNotFoundError:
    # package is not installed
    __version__ = "0.1"

from .data import Dataset, gen_synthetic, load_image_dir, split  # noqa: E402
from .parser import parse_config, parsed_to_config  # noqa: E402
from .pipeline import (  # noqa: E402
    PipelineConfig,
    majority_vote,
    run_ablation,
    run_pipeline,
    train_branch,
)

__all__ = [
    "Dataset",
    "PipelineConfig",
    "gen_synthetic",
    "load_image_dir",
    "majority_vote",
    "parse_config",
    "parsed_to_config",
    "run_ablation",
    "run_pipeline",
    "split",
    "train_branch",
    "__version__",
]
