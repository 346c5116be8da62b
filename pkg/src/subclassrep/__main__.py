import sys

from subclassrep.cli import main

sys.exit(main())
