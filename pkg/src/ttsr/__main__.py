"""Entry point for ``python -m ttsr``."""
import sys

from .cli import main

sys.exit(main())
