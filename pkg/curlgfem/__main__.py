import sys

from curlgfem.cli import main

sys.exit(main())
