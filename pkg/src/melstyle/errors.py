"""Shared exception types; the CLI maps them onto its exit-code contract."""


class MelstyleError(Exception):
    """Base class for all package errors."""


class ConfigError(MelstyleError):
    """Bad configuration or usage; CLI exit code 2."""


class UnknownUtteranceError(ConfigError):
    """A (document, sentence) reference that does not exist in the corpus."""


class DataError(MelstyleError):
    """Missing or inconsistent on-disk data; CLI exit code 1."""


class DivergenceError(MelstyleError):
    """Training produced a non-finite loss; CLI exit code 3."""
