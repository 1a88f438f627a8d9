import sys

from sigsde.cli import main

sys.exit(main())
