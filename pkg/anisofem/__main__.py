# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices

import sys

from .experiment_cli import main

sys.exit(main())
