from .roi_align import *
from .aggregation import *
