"""CEFR difficulty estimation and simplification evaluation for French text."""

from cefrkit.errors import DataError, ProviderError

__version__ = "0.1.0"

__all__ = ["DataError", "ProviderError", "__version__"]
