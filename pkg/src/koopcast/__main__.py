import sys

from koopcast.harness.cli import main

sys.exit(main())
