import sys

from visiongru.cli import main

sys.exit(main())
