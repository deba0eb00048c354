"""Exception hierarchy shared across the package."""


class JitdpError(Exception):
    """Base class for all package errors."""


class CorpusError(JitdpError):
    """Malformed commit records or invalid split specifications."""


class MiningError(JitdpError):
    """Git repository mining failures."""


class TokenizationError(JitdpError):
    """Vocabulary or serialization failures."""


class ModelError(JitdpError):
    """Encoder / checkpoint / bundle inconsistencies."""


class TrainingError(JitdpError):
    """Invalid training configuration or state."""


class EvaluationError(JitdpError):
    """Undefined or impossible metric computations."""


class ConfigError(JitdpError):
    """Invalid run configuration (unknown keys, bad values)."""
