"""Exception hierarchy shared across the package."""


class IcfitError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(IcfitError):
    pass


class AllMissingColumn(IcfitError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has no observed entries")


class NonFiniteObserved(IcfitError):
    pass


class EmptyWindow(IcfitError):
    pass


class DegenerateColumn(IcfitError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has zero variance")


class EstimatorFailure(IcfitError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"estimator failed at iteration {iteration}: {cause}")


class BlockFailure(IcfitError):
    def __init__(self, block: str, iteration: int, cause: Exception):
        self.block = block
        self.iteration = iteration
        self.cause = cause
        super().__init__(
            f"block {block!r} failed at iteration {iteration}: {cause}"
        )


class InsufficientChains(IcfitError):
    pass


class DegenerateDof(IcfitError):
    pass


class NoConvergence(IcfitError):
    def __init__(self, max_sweeps: int, best=None):
        self.max_sweeps = max_sweeps
        self.best = best
        super().__init__(f"no convergence within {max_sweeps} sweeps")


class NoTrueEdges(IcfitError):
    pass


class ConstantSeries(IcfitError):
    pass


class InfeasibleRate(IcfitError):
    pass


class NotPositiveDefinite(IcfitError):
    pass


class SingularPrecision(IcfitError):
    pass
