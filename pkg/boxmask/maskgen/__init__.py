from .coarse_masks import *
