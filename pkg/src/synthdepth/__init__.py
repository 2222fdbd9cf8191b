"""Synthetic depth data toolkit: rendering, codecs, projection, manifests and metrics."""

__version__ = "0.1.0"

from .depthio import DepthMap, PointCloud, QuantizedDepth
from .geometry import CameraModel, ProjectedPoint, RigidTransform

__all__ = ["CameraModel", "DepthMap", "PointCloud", "ProjectedPoint", "QuantizedDepth",
           "RigidTransform", "__version__"]
