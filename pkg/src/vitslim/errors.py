"""Exception hierarchy shared by every vitslim module."""


class VitSlimError(Exception):
    """Base class; the CLI maps these to ``error: <kind>: <message>`` lines."""

    kind = "error"


class DimensionError(VitSlimError, ValueError):
    kind = "dimension"


class NumericError(VitSlimError, FloatingPointError):
    kind = "numeric"


class ContractError(VitSlimError, ValueError):
    kind = "contract"


class ConfigError(VitSlimError, ValueError):
    kind = "config"


class MeasurementError(VitSlimError, RuntimeError):
    kind = "measurement"


class TrainingError(VitSlimError, RuntimeError):
    kind = "training"


class CheckpointError(VitSlimError, IOError):
    kind = "checkpoint"


class CheckpointVersionError(CheckpointError):
    kind = "checkpoint-version"


class CheckpointBoundsError(CheckpointError):
    kind = "checkpoint-bounds"


class ImageFormatError(VitSlimError, ValueError):
    kind = "image-format"


class ExportError(VitSlimError, IOError):
    kind = "io"
