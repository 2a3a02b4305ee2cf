from .seeding import *
from .gradcheck import *
