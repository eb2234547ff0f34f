"""Exception taxonomy shared by all pfl modules.

Every error raised on purpose by this package derives from :class:`PflError`
so callers (and the command line driver) can distinguish anticipated failure
modes from genuine bugs.  The hierarchy mirrors the three broad ways a run
can go wrong: the inputs were ill posed, the numerics broke down, or the
data handed between pipeline stages was malformed.
"""


class PflError(Exception):
    """Base class for all anticipated pfl failures."""


class ConfigurationError(PflError):
    """Ill-posed parameters or geometry (caught before any computation)."""


class AssemblyError(PflError):
    """Finite element operators could not be built (e.g. degenerate element)."""


class StepError(PflError):
    """A time step failed: solver breakdown or non-finite field values.

    Carries an optional diagnostic payload (``state``, ``residual``) so the
    failing configuration can be inspected post mortem.
    """

    def __init__(self, message, state=None, residual=None):
        super().__init__(message)
        self.state = state
        self.residual = residual


class TrainingError(PflError):
    """Classifier training diverged or was handed an unusable dataset."""


class UqError(PflError):
    """A Monte Carlo study lost too many runs to be trustworthy."""


class DataError(PflError):
    """Malformed or inconsistent data exchanged between pipeline stages."""


class LabelingError(DataError):
    """A labeling rule could not find the feature it keys on."""


class SplitError(DataError):
    """A dataset split request cannot be honored (class too small, bad fractions)."""
