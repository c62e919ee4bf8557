"""Extremogram estimation, exact simulation and GLSE fitting for Brown-Resnick space-time fields."""

from .domain import *  # noqa: F401,F403
from .errors import (
    ExtremoError,
    FieldFormatError,
    NumericalError,
    PartialFailureError,
    SingularLagError,
    UndefinedEstimateError,
    ValidationError,
)
from .extremogram import *  # noqa: F401,F403
from .glse import *  # noqa: F401,F403
from .models import *  # noqa: F401,F403
from .simulate import *  # noqa: F401,F403
from .study import *  # noqa: F401,F403
from .subsampling import *  # noqa: F401,F403

__version__ = "0.1.0"
