"""Active volumetric exploration: an ensemble of voxel radiance fields
drives information-seeking quadrotor trajectories through a procedurally
generated indoor scene.
"""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
