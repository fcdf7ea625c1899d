"""Critical points of random holomorphic sections via Wishart eigenvalue statistics."""

from ._version import __version__

__all__ = ["__version__"]
