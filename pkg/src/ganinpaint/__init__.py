"""Image inpainting by searching the latent space of a GAN trained on clean images."""
__version__ = "0.1.0"

from .estimator import GanInpainter
from .gan import Gan, GanConfig
from .inpaint import InpaintConfig, InpaintResult, invert, invert_batch

__all__ = [
    "Gan",
    "GanConfig",
    "GanInpainter",
    "InpaintConfig",
    "InpaintResult",
    "__version__",
    "invert",
    "invert_batch",
]
