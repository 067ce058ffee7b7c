"""Crop-and-embed adapter: detector dumps to owfilter interchange files."""

from .config import ExtractorConfig
from .dialects import RawDetection, parse_dump, register_dialect
from .encoders import EncoderError, build_encoder
from .extract import ExtractResult, extract

__version__ = "0.1.0"
