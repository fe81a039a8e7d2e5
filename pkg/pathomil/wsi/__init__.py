from .raster import *
from .filters import *
from .segmentation import *
from .patching import *
from .synthetic_slide import *
