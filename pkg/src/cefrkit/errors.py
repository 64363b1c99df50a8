"""Exception hierarchy shared across modules.

The CLI maps these families onto exit codes, so new errors should subclass
one of them rather than raising bare ``ValueError``/``RuntimeError``.
"""


class DataError(ValueError):
    """Invalid, missing or malformed input data."""


class ProviderError(RuntimeError):
    """A generation, embedding or classification backend failed."""


class ConfigError(ProviderError):
    """Provider configuration is unusable (e.g. missing API key)."""


class AuthError(ProviderError):
    """The backend rejected our credentials. Never retried."""


class ProviderTimeout(ProviderError):
    """The backend did not answer within the allotted retries."""


class MalformedResponse(ProviderError):
    """The backend answered with a body we cannot interpret."""
