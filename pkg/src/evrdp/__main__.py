import sys

from evrdp.cli import main

sys.exit(main())
