import sys

from layervid.cli import main

sys.exit(main())
