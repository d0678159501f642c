import sys

from scoredecomp.cli import main

sys.exit(main())
