"""Allow ``python -m genias``."""

import sys

from .cli import main

sys.exit(main())
