"""Exception types.

Three families, matching the CLI exit codes: configuration problems (exit 1),
data problems (exit 2), numeric failures (exit 3).
"""

from __future__ import annotations


class VfmlabError(Exception):
    """Base class for all package-raised errors."""


class ConfigError(VfmlabError):
    """Invalid configuration: bad keys, out-of-range values, unknown enums."""


class DataError(VfmlabError):
    """Invalid or unusable data."""


class SchemaError(DataError):
    """Input file does not match the documented schema."""


class EmptyDatasetError(DataError):
    """No valid observations survived ingestion or filtering."""


class ScenarioError(DataError):
    """Synthetic scenario produced an invalid observation."""


class NumericError(VfmlabError):
    """Numerical failure: non-finite values, singular systems, divergence."""


class GradientError(NumericError):
    """A forward pass went non-finite during gradient evaluation."""

    def __init__(self, obs_index: int, message: str | None = None):
        self.obs_index = obs_index
        super().__init__(message or f"non-finite forward value at observation {obs_index}")


class DegenerateFeatureError(NumericError):
    """A feature's scatter is singular even after regularization."""

    def __init__(self, feature_index: int, message: str | None = None):
        self.feature_index = feature_index
        super().__init__(
            message or f"degenerate feature at index {feature_index}: "
            "zero variance in both samples with differing means"
        )
