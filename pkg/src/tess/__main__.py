import sys

from tess.cli import main

sys.exit(main())
