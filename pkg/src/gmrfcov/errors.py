"""Exception hierarchy.

Two broad families matter to callers: precondition violations (bad input,
unsatisfiable request) and numeric failures (non-SPD matrix, solver
non-convergence).  The CLI maps these to exit codes 2 and 3.
"""


class GmrfcovError(Exception):
    """Base class for all package errors."""


class PreconditionError(GmrfcovError):
    """Input violates a documented precondition."""


class PatternError(PreconditionError):
    """A requested covariance pair lies outside the factor fill pattern."""

    def __init__(self, i: int, j: int):
        self.pair = (i, j)
        super().__init__(
            f"pair ({i}, {j}) is outside the Cholesky fill pattern; "
            "re-run the symbolic analysis with this pair in the augmentation set"
        )


class CoverageError(PreconditionError):
    """A requested pair is not covered by the block structure in use."""


class MemoryBudgetError(PreconditionError):
    """Estimated factor storage exceeds the configured budget."""

    def __init__(self, estimated_bytes: int, budget_bytes: int):
        self.estimated_bytes = estimated_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"estimated factor storage {estimated_bytes} B exceeds budget "
            f"{budget_bytes} B; direct selected inversion refused"
        )


class NumericError(GmrfcovError):
    """Numeric failure during factorization or iteration."""


class NotPositiveDefiniteError(NumericError):
    """Cholesky factorization hit a nonpositive pivot."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"nonpositive pivot at column {column}: matrix is not positive definite")


class ConvergenceError(NumericError):
    """Iterative solver failed to reach its tolerance."""

    def __init__(self, iterations: int, residual: float, tol: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations: "
            f"relative residual {residual:.3e} > {tol:.3e}"
        )
