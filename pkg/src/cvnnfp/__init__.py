"""Complex-valued and real-valued CNNs for RF device fingerprinting."""

from .kernels import BACKEND, HAVE_COMPILED

__version__ = "0.1.0"
__all__ = ["BACKEND", "HAVE_COMPILED", "__version__"]
