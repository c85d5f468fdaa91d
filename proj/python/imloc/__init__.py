"""Visual localization against compact scene maps."""

from ._imloc import *  # noqa: F401,F403
from ._imloc import __doc__  # noqa: F401
