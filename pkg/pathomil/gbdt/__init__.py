from .tree import *
from .ensemble import *
from .enhanced_features import *
