import sys

from copydraft.harness.cli import main

sys.exit(main())
