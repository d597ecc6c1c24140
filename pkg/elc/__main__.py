import sys

from elc.cli import main

sys.exit(main())
