"""detector-adapter: serve pretrained object detectors over the local detect protocol."""

from .app import create_app, serve
from .backends import StaticBackend, build_backend
from .config import AdapterConfig
from .coords import adapt_detections, to_model_frame

__version__ = "0.1.0"
