from .ap_plots import *
