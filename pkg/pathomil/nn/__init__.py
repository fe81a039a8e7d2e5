from .core import *
from .optim import *
from .gradcheck import *
