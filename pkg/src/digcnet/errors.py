"""Exception types shared across the pipeline, mapped to CLI exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERIC = 4


class ParseError(ValueError):
    """Malformed input file; message names the offending row/record."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact does not exist."""
