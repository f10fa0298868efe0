import sys

from botdr.cli import main

sys.exit(main())
