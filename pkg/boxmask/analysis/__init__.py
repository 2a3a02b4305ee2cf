from .evaluation import *
from .results import *
from .analysis import *
from .ablation import *
