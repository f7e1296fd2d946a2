import sys

from conelab import main

sys.exit(main())
