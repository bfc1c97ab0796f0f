"""Exception types raised across the package."""


class FairALError(Exception):
    """Base class for every error raised by fairal."""


# -- models ---------------------------------------------------------------

class EmptyTrainSet(FairALError, ValueError):
    pass


class SingleClassTrainSet(FairALError, ValueError):
    """Fewer than two distinct labels in the training data (cold start)."""


class DimensionMismatch(FairALError, ValueError):
    pass


class UntrainedModel(FairALError, RuntimeError):
    pass


class GradientUnsupported(FairALError, TypeError):
    """The model has no training gradient (committees, boosted stumps)."""


# -- sampling -------------------------------------------------------------

class InvalidDistribution(FairALError, ValueError):
    pass


class CommitteeTooSmall(FairALError, ValueError):
    pass


class EmptyPool(FairALError, ValueError):
    pass


class BatchExceedsPool(FairALError, ValueError):
    pass


# -- fairness -------------------------------------------------------------

class MissingSensitive(FairALError, ValueError):
    pass


class DegenerateGroup(FairALError, ValueError):
    """One sensitive group is absent, so group statistics are undefined."""


class NonFiniteObjective(FairALError, FloatingPointError):
    pass


class NoCorrectPredictions(FairALError, ValueError):
    pass


# -- datasets -------------------------------------------------------------

class InvalidVariance(FairALError, ValueError):
    pass


class InvalidProbability(FairALError, ValueError):
    pass


class MissingColumn(FairALError, KeyError):
    pass


class UnmappableSensitive(FairALError, ValueError):
    pass


class EmptyFile(FairALError, ValueError):
    pass


class MissingValue(FairALError, ValueError):
    """A numeric CSV cell is empty; imputation is left to the caller."""


class InfeasibleSplit(FairALError, ValueError):
    pass


class AlreadyQueried(FairALError, KeyError):
    pass


class IndexOutOfPool(FairALError, IndexError):
    pass


# -- metrics / engine / cli -----------------------------------------------

class EmptyInput(FairALError, ValueError):
    pass


class LengthMismatch(FairALError, ValueError):
    pass


class ShapeMismatch(FairALError, ValueError):
    pass


class ColdStartFailure(FairALError, RuntimeError):
    pass


class MissingIteration(FairALError, KeyError):
    pass


class ConfigError(FairALError, ValueError):
    pass
