"""List-decodable mean estimation with fast multifilters, and clustering built on it."""

from ._accel import backend_name
from .core import Dataset, DegenerateError, LdmeError, Params

__version__ = "0.1.0"

__all__ = ["Dataset", "Params", "LdmeError", "DegenerateError", "backend_name", "__version__"]
