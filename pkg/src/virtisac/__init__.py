"""Virtual-aperture integrated sensing and communication toolkit."""
from . import envsynth, netsynth, otfs, signal
from .kernels import available_backends, backend, use_backend

__version__ = "0.1.0"

__all__ = ["signal", "netsynth", "envsynth", "otfs", "available_backends", "backend", "use_backend",
           "__version__"]
