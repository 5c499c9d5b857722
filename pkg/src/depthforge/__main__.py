"""Entry point for ``python -m depthforge``."""

import sys

from .cli import main

sys.exit(main())
