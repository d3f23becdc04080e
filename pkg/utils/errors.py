class SchedSimError(Exception):
    """Base class for every error raised by the simulator, models and schedulers."""


class ConfigError(SchedSimError):
    """A settings, scenario or normalization file is malformed."""


class PartitionError(SchedSimError):
    """An allocation would break the partition invariants of the server."""


class InfeasibleError(SchedSimError):
    """A resource request cannot be satisfied, not even through sharing."""


class ParamsFileError(SchedSimError):
    """A parameter file is corrupted, has the wrong version or the wrong shape."""


class TrainingDivergedError(SchedSimError):
    """Training produced a non-finite loss."""


class MissingModelError(SchedSimError):
    """Trained model files needed by a scheduler are not on disk."""


class ScenarioFailure(SchedSimError):
    """A scenario run could not be completed."""
