from .params import *
from .attention import *
from .output import *
from .clam import *
from .abmil import *
from .mil_model import *
