"""Joint Gaussian graphical models by two-target covariance shrinkage."""

__version__ = "0.1.0"

from .covariance import GroupedDataset, sample_covariance, standardize  # noqa: E402
from .inference import EdgeSet, SelectionPolicy, partial_correlations, select_edges  # noqa: E402
from .pipeline import infer_networks  # noqa: E402
from .shrinkage import ShrinkOptions, solve_gamma, ttls_shrink  # noqa: E402
from .simulate import SimulationConfig, generate_joint_truth  # noqa: E402

__all__ = [
    "EdgeSet",
    "GroupedDataset",
    "SelectionPolicy",
    "ShrinkOptions",
    "SimulationConfig",
    "generate_joint_truth",
    "infer_networks",
    "partial_correlations",
    "sample_covariance",
    "select_edges",
    "solve_gamma",
    "standardize",
    "ttls_shrink",
]
