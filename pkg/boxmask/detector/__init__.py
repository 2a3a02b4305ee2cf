from .config import *
from .backbone import *
from .proposals import *
from .heads import *
from .losses import *
from .detector import *
from .checkpoint import *
