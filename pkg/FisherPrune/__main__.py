import sys

from .fp_harness import main

sys.exit(main())
