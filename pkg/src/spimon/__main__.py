import sys

from spimon.cli import main

sys.exit(main())
