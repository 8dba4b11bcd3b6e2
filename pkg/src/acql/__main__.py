import sys

from acql.cli import main

sys.exit(main())
