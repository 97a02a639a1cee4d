"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (used as the CLI exit
status) and an optional ``stage`` tag naming the pipeline step that raised it.
"""


class FBError(Exception):
    code = 1

    def __init__(self, message, *, stage=None, details=None):
        super().__init__(message)
        self.stage = stage
        self.details = dict(details or {})

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "code": self.code,
            "stage": self.stage,
            "message": str(self),
            "details": self.details,
        }


class ConfigError(FBError):
    code = 2


class ShapeError(FBError, ValueError):
    code = 3


class InvalidDegreeError(FBError, ValueError):
    code = 4


class NonInvertibleError(FBError):
    code = 5


class InvalidComparisonError(FBError, ValueError):
    code = 6


class DomainError(FBError, ValueError):
    code = 7


class RankError(NonInvertibleError):
    code = 8


class NotUniformlyAttractingError(FBError):
    code = 10


class NoSplitError(FBError):
    code = 11


class PerturbationTooLargeError(FBError):
    code = 12


class NotCorrectlyOrderedError(FBError):
    code = 13


class NotExpandingError(FBError):
    code = 20


class AttractionHypothesisError(FBError):
    code = 21


class PTooSmallError(FBError):
    code = 22


class NotInBasinError(FBError):
    code = 30


class NoConvergenceError(FBError):
    code = 31


class HorizonTooShortError(FBError):
    code = 32


class PerturbationUnrealizableError(FBError):
    code = 40


class InfeasibleParametersError(FBError):
    code = 41


class StaleArtifactError(FBError):
    code = 50


class IntegrityError(FBError):
    code = 51


class InvariantFailure(FBError):
    code = 60
