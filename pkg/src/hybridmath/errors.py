"""Exception types shared across the harness."""


class HarnessError(Exception):
    """Base class for all harness-raised errors."""


class ParseError(HarnessError):
    """A file or payload could not be parsed; message names the location."""


class IntegrityError(HarnessError):
    """Data violates a uniqueness or consistency requirement."""


class ConfigurationError(HarnessError):
    """A config value or combination of values is invalid."""


class BackendError(HarnessError):
    """The generation backend failed after retries were exhausted."""

    def __init__(self, message: str, cause: Exception | None = None):
        super().__init__(message)
        self.cause = cause


class FixtureMissError(HarnessError):
    """A replay fixture has no entry for the requested key."""

    def __init__(self, key: str):
        super().__init__(f"replay fixture has no entry for request key {key}")
        self.key = key


class RunnerProtocolError(HarnessError):
    """The runner child process violated the one-request/one-reply protocol."""
