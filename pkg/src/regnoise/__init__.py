"""Regularisation-by-noise numerics: Gaussian paths, local times, averaging, nonlinear Young ODEs."""
from importlib import metadata as _md

try:
    __version__ = _md.version("artifact")
except _md.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .grids import FrequencyGrid, time_grid  # noqa: E402
from .gaussmodels import GaussianModel, SamplePath, sample  # noqa: E402

__all__ = ["FrequencyGrid", "GaussianModel", "SamplePath", "sample", "time_grid", "__version__"]
