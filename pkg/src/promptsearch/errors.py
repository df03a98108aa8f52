"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new error types should
subclass one of the three branches rather than the root.
"""


class PromptSearchError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PromptSearchError):
    """Invalid configuration: bad flags, malformed templates, mismatched files."""


class DataError(PromptSearchError):
    """Invalid or inconsistent dataset contents."""


class OracleError(PromptSearchError):
    """Failure while querying a model oracle."""


class TransportError(OracleError):
    """Network-level failure talking to a remote oracle."""


class ProtocolError(OracleError):
    """Remote peer violated the wire protocol contract."""


class FingerprintMismatch(OracleError):
    """Client and server disagree on the vocabulary."""
