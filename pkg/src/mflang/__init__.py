"""Mean-field Langevin dynamics: simulation and numerical verification toolkit.

Subpackages cover measure representations, flat-energy functionals with exact
derivative formulas, coupled particle integrators (over- and under-damped),
small-scale optimal transport, the Gibbs fixed-point map, and experiment
harnesses that measure contraction rates and propagation-of-chaos scaling.
"""

from mflang.measures import (
    EmpiricalMeasure,
    GridMeasure1D,
    RngStream,
    grid_normalize,
    sample_gaussian_cloud,
    second_moment,
)

__version__ = "0.1.0"

__all__ = [
    "EmpiricalMeasure",
    "GridMeasure1D",
    "RngStream",
    "grid_normalize",
    "sample_gaussian_cloud",
    "second_moment",
    "__version__",
]
