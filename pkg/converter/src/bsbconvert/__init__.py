"""bsbconvert: published BERT checkpoints to the bsb native file formats."""

from .convert import (
    ALIASES,
    ConversionError,
    ConversionResult,
    convert,
    expected_shapes,
    native_config,
)
from .manifest import ConversionManifest, ManifestError
from .mapping import MappingError, default_bert_mapping, default_drop_names
from .reference import emit_reference, forward_single, read_native_checkpoint
from .synth import synthesize_toy_source

__version__ = "0.1.0"

__all__ = [
    "ALIASES",
    "ConversionError",
    "ConversionManifest",
    "ConversionResult",
    "ManifestError",
    "MappingError",
    "convert",
    "default_bert_mapping",
    "default_drop_names",
    "emit_reference",
    "expected_shapes",
    "forward_single",
    "native_config",
    "read_native_checkpoint",
    "synthesize_toy_source",
    "__version__",
]
