"""Exception and warning types shared across the package."""


class TensorRegError(Exception):
    """Base class for all errors raised by tensorreg."""


class DomainError(TensorRegError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DimensionMismatchError(DomainError):
    """Operands have incompatible shapes or dimensions."""


class SingularDesignError(TensorRegError):
    """A design matrix is rank deficient.

    Attributes
    ----------
    ncols, rank : int
        Number of columns of the offending design and its numerical rank.
    block : int or None
        Which factor block produced the design (1-based), when known.
    """

    def __init__(self, ncols, rank, block=None):
        self.ncols = ncols
        self.rank = rank
        self.block = block
        where = f" in block {block}" if block is not None else ""
        super().__init__(
            f"design matrix{where} has {ncols} columns but numerical rank {rank}"
        )


class GlmDivergenceError(TensorRegError):
    """IRLS failed to converge (e.g. separation in logistic regression).

    Carries the last iterate in ``last_fit``.
    """

    def __init__(self, message, last_fit=None):
        self.last_fit = last_fit
        super().__init__(message)


class FitConvergenceError(TensorRegError):
    """No restart of the block-relaxation fit produced a usable model.

    ``best_trace`` holds the objective trace of the restart that got
    furthest before failing.
    """

    def __init__(self, message, best_trace=None):
        self.best_trace = best_trace if best_trace is not None else []
        super().__init__(message)


class InferenceError(TensorRegError):
    """The Fisher information matrix is singular or otherwise unusable."""


class KRankSizeError(TensorRegError):
    """k-rank requested on a matrix with too many columns to enumerate."""


class ParseError(TensorRegError, ValueError):
    """A data file does not match its declared format."""


class DegenerateNormalizationWarning(UserWarning):
    """Identifiability normalization hit a measure-zero degenerate case.

    Emitted when a leading row entry is exactly zero or the ordering row
    has ties; a documented fallback normalization is applied instead.
    """
