class AsymptoticsError(Exception):
    """
    Base class of every error raised while building or validating an asymptotic expansion.
    """
    pass


class CapabilityError(AsymptoticsError):
    """A jet of higher order than the problem declares smooth was requested."""
    pass


class ProblemNotFoundError(AsymptoticsError):

    def __init__(self, name: str, available: list[str]):
        self.name = name
        self.available = available
        super().__init__(f'Unknown problem <{name}>. Available problems: {", ".join(available)}.')


class SolverFailure(AsymptoticsError):
    """
    Raised upon the failure of a non-linear solver to find a 'good' solution.
    """
    pass


class SingularJacobian(SolverFailure):
    pass


class ConditionViolation(AsymptoticsError):
    """
    A structural hypothesis of the method does not hold for the given problem (or could not be
    confirmed numerically). The command line maps every subclass to exit code 1.
    """
    pass


class StructureError(ConditionViolation):
    pass


class IsolationError(ConditionViolation):
    pass


class ReducedSolveError(ConditionViolation):
    pass


class AlgebraicLayerError(ConditionViolation):
    pass


class ContractionError(ConditionViolation):

    def __init__(self, msg: str, ratio: float | None = None, iterations: int | None = None):
        self.ratio = ratio
        self.iterations = iterations
        super().__init__(msg)


class StiffnessError(ConditionViolation):
    pass


class TurningDegeneracyError(ConditionViolation):
    pass


class MatchingStructureError(ConditionViolation):
    pass


class MatchingError(ConditionViolation):

    def __init__(self, msg: str, residual: float | None = None):
        self.residual = residual
        super().__init__(msg)


class ReferenceSolveError(ConditionViolation):
    pass
