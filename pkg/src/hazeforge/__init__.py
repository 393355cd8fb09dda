"""Parameter-space haze augmentation for small paired dehazing datasets."""

from .core import (AtmosphericMap, AugmentationSpec, DensityMap, DepthMap, HazeForgeError, HazePair, Image,
                   OutOfRangeError, ShapeMismatchError, TransmissionMap, normalize_depth, validate_pair)
from .scattering import compute_transmission, invert_transmission, render_haze

__version__ = "0.1.0"
