"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ForgeError(Exception):
    exit_code = 1


class ConfigError(ForgeError):
    """Invalid or missing configuration."""

    exit_code = 2


class InputError(ForgeError):
    """Malformed or missing input data."""

    exit_code = 2


class EmptyResultError(ForgeError):
    """A stage finished but produced nothing usable."""

    exit_code = 3


class BackendError(ForgeError):
    """An LLM, embedding or search backend failed after retries."""

    exit_code = 4


class SchemaError(BackendError):
    """A backend answered with a payload that does not match the wire schema."""
