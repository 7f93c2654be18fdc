"""Allow ``python -m bsb`` as an alternative to the installed entry point."""

import sys

from .cli import main

sys.exit(main(sys.argv[1:]))
