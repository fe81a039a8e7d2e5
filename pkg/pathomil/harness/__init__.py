from .train_config import *
from .folds import *
from .training import *
from .cross_validation import *
