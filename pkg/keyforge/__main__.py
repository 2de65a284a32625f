import sys

from keyforge.app import main

sys.exit(main())
