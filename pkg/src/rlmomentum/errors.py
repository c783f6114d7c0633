"""Exception taxonomy shared across the package.

Every error raised by the library derives from ``RLMomentumError`` so callers
can catch one base class at pipeline boundaries.
"""


class RLMomentumError(Exception):
    """Base class for all library errors."""


# -- data loading / synthesis -------------------------------------------------

class MalformedRow(RLMomentumError):
    """A CSV row could not be parsed (bad date or number)."""


class NonPositivePrice(RLMomentumError):
    """A close price was zero or negative."""


class DuplicateDate(RLMomentumError):
    """The same calendar date appeared twice in one series."""


class UnknownTicker(RLMomentumError):
    """Ticker not present in the catalog and no asset class override given."""


class BadSpec(RLMomentumError):
    """Invalid synthetic-data specification."""


class InsufficientHistory(RLMomentumError):
    """Not enough observations for the requested computation."""


# -- indicators ---------------------------------------------------------------

class BadSpan(RLMomentumError):
    """EWM span must be >= 2."""


# -- autodiff / network -------------------------------------------------------

class NonFiniteInput(RLMomentumError):
    """A forward pass received NaN or infinite inputs."""


class TapeEmpty(RLMomentumError):
    """backward() called on a tape that recorded no operations."""


class ShapeMismatch(RLMomentumError):
    """Gradient or parameter arrays have incompatible shapes."""


# -- environment --------------------------------------------------------------

class OutOfRange(RLMomentumError):
    """Episode window does not fit inside the available data."""


class EpisodeDone(RLMomentumError):
    """step() called on a finished episode."""


# -- agents -------------------------------------------------------------------

class EmptyBatch(RLMomentumError):
    """A training step received no transitions."""


class IncompleteEpisode(RLMomentumError):
    """Policy-gradient update requires a complete episode."""


class EnvCountMismatch(RLMomentumError):
    """A2C batch does not align with the configured environment count."""


class DivergedLoss(RLMomentumError):
    """Training loss became non-finite."""


# -- evaluation / reporting ---------------------------------------------------

class DegenerateSeries(RLMomentumError):
    """Too few observations to compute metrics."""


class EmptyPortfolio(RLMomentumError):
    """Portfolio aggregation requires at least one member."""


class UnwritableOutput(RLMomentumError):
    """Report files could not be written."""
