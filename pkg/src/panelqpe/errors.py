"""Exception types shared across the package."""


class QpeError(Exception):
    """Base class for all panelqpe errors."""


# --- panel construction / ingestion -------------------------------------

class MissingCell(QpeError):
    """Some (unit, period) combination is absent from the input records."""


class DuplicateCell(QpeError):
    """Some (unit, period) combination appears more than once."""


class NonFiniteValue(QpeError):
    """An outcome or regressor value is NaN or infinite."""


class DimensionMismatch(QpeError):
    """Regressor vectors do not all share the same length."""


class TooFewPeriods(QpeError):
    """Half-panel splitting needs at least two time periods."""


# --- kernel moment machinery ---------------------------------------------

class EmptyRegion(QpeError):
    """The clipped integration region has (numerically) zero kernel mass."""


class SingularC(QpeError):
    """The centered second-moment matrix of the clipped kernel is singular."""


class SingularMoment(QpeError):
    """A kernel moment matrix needed for the variance is singular."""


# --- solvers --------------------------------------------------------------

class NoLocalData(QpeError):
    """No unit has positive total kernel weight at the evaluation point."""


class RankDeficientDesign(QpeError):
    """The within-unit local design does not span the regressor dimension."""


class AllWeightsZero(QpeError):
    """A weighted quantile was requested with no strictly positive weight."""


# --- inference ------------------------------------------------------------

class DegenerateDensity(QpeError):
    """A density estimate needed for inference is numerically zero."""


# --- simulation -----------------------------------------------------------

class UnsupportedDgp(QpeError):
    """The requested quantity has no closed form for this data family."""


class InvalidGrid(QpeError):
    """Monte Carlo evaluation grids must be nonempty."""
