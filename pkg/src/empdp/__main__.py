import sys

from empdp.cli import main

sys.exit(main())
