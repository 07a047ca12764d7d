"""Exception types shared across the pipeline.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat
and the categories coarse.
"""


class ConfigError(ValueError):
    """Invalid run configuration: unknown keys, bad values, missing settings."""


class DataFormatError(ValueError):
    """A dataset or checkpoint file is malformed (bad magic, version, sizes)."""


class DegenerateScaleError(ValueError):
    """A fitted scale factor is zero or too close to it to be invertible."""
