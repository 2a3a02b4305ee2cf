from .synthvid import *
from .data import *
from .run_config import *
