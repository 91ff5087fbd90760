import sys

from rpdct.cli import main

sys.exit(main())
