"""Error types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data/format problems with 3.
"""


class ConfigurationError(ValueError):
    """A parameter combination that cannot be simulated or trained."""


class DataFormatError(ValueError):
    """A dataset, checkpoint, or CSV file that does not match its schema."""
