"""Batch entry point: run one conversion manifest.

    python3 -m bsbconvert <manifest.json>

Converts, then emits reference activations when the manifest lists
reference sentences. Exit codes: 0 success, 1 usage, 2 conversion or
data error.
"""

import json
import sys

from .convert import ConversionError, convert
from .manifest import ConversionManifest, ManifestError
from .mapping import MappingError
from .reference import emit_reference


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if len(argv) != 1 or argv[0] in ("-h", "--help"):
        print("usage: python3 -m bsbconvert <manifest.json>", file=sys.stderr)
        return 0 if argv and argv[0] in ("-h", "--help") else 1
    try:
        manifest = ConversionManifest.from_file(argv[0])
        result = convert(manifest)
        print(f"wrote {result.checkpoint_path} ({len(result.mapped)} tensors, "
              f"{len(result.dropped)} dropped)")
        print(f"wrote {result.vocab_path}")
        print(f"log at {result.log_path}")
        if manifest.reference_sentences:
            rows = emit_reference(manifest)
            print(f"wrote {len(rows)} reference rows to {manifest.reference_path}")
    except (ConversionError, ManifestError, MappingError,
            OSError, json.JSONDecodeError) as e:
        print(f"bsbconvert: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
