from .bag import *
from .manifest import *
from .synthetic import *
from .descriptors import *
