import sys

from cefrkit.cli import main

sys.exit(main())
