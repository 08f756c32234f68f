import sys

from clqlab.harness.cli import main

sys.exit(main())
