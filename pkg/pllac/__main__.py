import sys

from pllac.cli import main

sys.exit(main())
