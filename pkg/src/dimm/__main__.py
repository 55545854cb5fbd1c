"""Module entry point so ``python -m dimm`` works like the ``dimm`` script."""

import sys

from dimm.cli import main

if __name__ == "__main__":
    sys.exit(main())
