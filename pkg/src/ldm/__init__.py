"""Local dynamic map: a layered spatio-temporal object store for connected vehicles and UAVs."""

from .config import ServiceConfig
from .service import LocalDynamicMap

__all__ = ["LocalDynamicMap", "ServiceConfig"]
__version__ = "0.1.0"
