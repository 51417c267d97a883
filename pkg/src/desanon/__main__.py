import sys

from desanon.cli import main

sys.exit(main())
