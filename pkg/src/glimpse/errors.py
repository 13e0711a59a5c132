"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration errors are code 1,
I/O and file-format errors code 2, remote-provider errors code 3, and
numerical/degenerate conditions code 4.
"""

from __future__ import annotations


class GlimpseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GlimpseError):
    """Invalid configuration: bad shapes, out-of-range parameters, bad flags."""


class ObservationError(GlimpseError):
    """An observation violates its invariants (unsorted top list, bad mass)."""


class DistributionError(GlimpseError):
    """A completed rank distribution violates its invariants."""


class DegenerateMassError(GlimpseError):
    """Remaining probability mass is zero or negative; tail solvers are undefined."""


class DegenerateVarianceError(GlimpseError):
    """Accumulated variance is zero; the curvature statistic is undefined."""


class DumpError(GlimpseError):
    """A dump file is malformed. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergedError(GlimpseError):
    """Training produced a non-finite or increasing loss. Carries the epoch."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class ModelFileError(GlimpseError):
    """Base class for model/table file problems."""


class CorruptFileError(ModelFileError):
    """File is truncated or otherwise unreadable."""


class VersionMismatchError(ModelFileError):
    """File magic/version does not match what this code writes."""


class ClientError(GlimpseError):
    """Base class for remote-provider failures."""


class AuthError(ClientError):
    """The provider rejected our credentials."""


class ProviderError(ClientError):
    """The provider rejected the request (no echo/logprobs support, bad payload)."""


class TopKUnsupportedError(ClientError):
    """The requested top-K exceeds what the provider supports."""


class RateLimitExhaustedError(ClientError):
    """Transient failures persisted through every retry attempt."""
