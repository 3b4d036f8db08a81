import sys

from uev.cli import main

sys.exit(main())
