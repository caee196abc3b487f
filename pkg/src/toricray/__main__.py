"""Allow ``python -m toricray``."""

import sys

from toricray.cli import main

sys.exit(main())
