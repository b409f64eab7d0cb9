"""Exception types shared across the package.

Every error that signals a contract violation derives from PairlensError so
callers (CLI, service) can map failures to exit codes / HTTP codes uniformly.
"""


class PairlensError(Exception):
    """Base class for all package-specific errors."""

    code = "error"


class NotPositiveDefinite(PairlensError):
    """A covariance matrix failed the Cholesky pivot test."""

    code = "not_positive_definite"


class DimensionMismatch(PairlensError):
    """Array shapes are inconsistent with the declared block structure."""

    code = "dimension_mismatch"


class AcceptanceTooLow(PairlensError):
    """Rejection sampling hit the proposal cap before collecting n draws."""

    code = "acceptance_too_low"


class UnknownExample(PairlensError):
    """Requested worked-example model name does not exist."""

    code = "unknown_example"


class ZeroConditioningMass(PairlensError):
    """Exact posterior requested for a conditioning event with mass zero."""

    code = "zero_conditioning_mass"


class DegenerateLabels(PairlensError):
    """Logistic fit requested with single-class labels."""

    code = "degenerate_labels"


class FoldDegenerate(PairlensError):
    """Cross-validation folds could not be built with both classes in train."""

    code = "fold_degenerate"


class MissingPropensity(PairlensError):
    """A propensity-based pairing strategy was run without scores."""

    code = "missing_propensity"


class EmptyArm(PairlensError):
    """Pair scoring requires at least one treated and one untreated unit."""

    code = "empty_arm"


class MissingOracleU(PairlensError):
    """An oracle computation needs unobserved columns the dataset lacks."""

    code = "missing_oracle_u"


class DegenerateDenominator(PairlensError):
    """Signal-ratio denominator is numerically zero."""

    code = "degenerate_denominator"


class NonFiniteDensity(PairlensError):
    """A log-density evaluated to NaN/inf on the requested grid."""

    code = "non_finite_density"


class LevelSetEmpty(PairlensError):
    """No samples fell inside the requested propensity window."""

    code = "level_set_empty"


class NotFound(PairlensError):
    """Unknown dataset or session identifier."""

    code = "not_found"


class StalePair(PairlensError):
    """Annotation submitted for a pair that is not the session cursor."""

    code = "stale_pair"


class Exhausted(PairlensError):
    """No pairs remain in the session."""

    code = "exhausted"


class InvalidAnnotation(PairlensError):
    """Annotation payload violates the record contract."""

    code = "validation_error"
