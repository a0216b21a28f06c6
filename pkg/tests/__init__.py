import os
import sys

# Modules under src/ are imported without a package prefix (e.g. `from utils.autodiff import ...`)
_SRC = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src'))
if _SRC not in sys.path:
    sys.path.insert(0, _SRC)
