import sys

from battrul.cli import main

sys.exit(main())
