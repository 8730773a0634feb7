"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto the
stable contract: 2 configuration, 3 numerical non-convergence, 4 structure
or theory-violation findings.
"""


class LayerlabError(Exception):
    exit_code = 1


class ConfigInvalid(LayerlabError):
    exit_code = 2


class GridMismatch(LayerlabError, ValueError):
    exit_code = 2


class NumericalFailure(LayerlabError):
    exit_code = 3


class NonConvergence(NumericalFailure):
    pass


class LineSearchFailure(NonConvergence):
    pass


class NewtonDivergence(NumericalFailure):
    pass


class EigensolveFailure(NumericalFailure):
    pass


class TailBelowNoise(NumericalFailure):
    pass


class WindowTooShort(NumericalFailure):
    pass


class ShiftTooLarge(LayerlabError, ValueError):
    exit_code = 2


class NotWellPosed(LayerlabError):
    exit_code = 4


class Violation(LayerlabError):
    """A computed object contradicts a structural property it should have."""

    exit_code = 4


class InconsistentEnergies(Violation):
    pass


class NondegeneracyViolated(Violation):
    pass


class CoercivityViolated(Violation):
    pass


class GapCollapse(Violation):
    pass


class StructureViolation(Violation):
    pass


class NonCauchy(Violation):
    pass


class MinimumOnBoundary(Violation):
    pass


class StageFailed(LayerlabError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
