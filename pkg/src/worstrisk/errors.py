"""Exception types raised across the package."""


class WorstRiskError(Exception):
    pass


class SingularDraw(WorstRiskError):
    """A sampled transfer matrix left I - B numerically singular after all retries."""


class SingularSystem(WorstRiskError):
    pass


class SingularD(WorstRiskError):
    pass


class DimensionMismatch(WorstRiskError, ValueError):
    pass


class TauOutOfRange(WorstRiskError, ValueError):
    pass


class SingularGram(WorstRiskError):
    pass


class MissingEnvironment(WorstRiskError):
    pass


class EmptyEnvironment(WorstRiskError):
    pass


class ExhaustedStream(WorstRiskError):
    """Not raised by default; stopping_times reports exhaustion through a flag."""


class SingularC1(WorstRiskError):
    pass


class UnsupportedTailKind(WorstRiskError):
    pass


class HypothesisViolated(WorstRiskError, ValueError):
    pass


class EventNeverOccurred(WorstRiskError):
    pass


class ParseError(WorstRiskError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class InconsistentDimensions(WorstRiskError):
    pass
