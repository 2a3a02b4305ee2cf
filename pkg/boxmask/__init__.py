from ._version import __version__

from . import geometry
from . import maskgen
from . import features
from . import sampling
from . import detector
from . import interfaces
from . import plotting
from . import analysis
from . import utils
