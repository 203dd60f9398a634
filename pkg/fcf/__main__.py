import sys

from fcf.main import main

sys.exit(main())
