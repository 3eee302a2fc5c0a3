"""Exception types raised across the pipeline."""


class MVSError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(MVSError, FileNotFoundError):
    pass


class SchemaViolation(MVSError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DuplicateSubject(MVSError, ValueError):
    def __init__(self, subject_id):
        self.subject_id = subject_id
        super().__init__(f"duplicate subject id {subject_id!r}")


class UnreadableImage(MVSError, OSError):
    def __init__(self, view, path, reason="cannot decode"):
        self.view = view
        self.path = path
        super().__init__(f"view {view}: {reason} ({path})")


class TooFewSubjectsInClass(MVSError, ValueError):
    def __init__(self, label, count, k):
        self.label = label
        super().__init__(f"class {label} has {count} subjects, need at least k={k}")


class UnknownBackbone(MVSError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown backbone"


class PretrainedWeightsUnavailable(MVSError, RuntimeError):
    pass


class ShapeMismatch(MVSError, ValueError):
    pass


class EmptyClass(MVSError, ValueError):
    pass


class NonFiniteLoss(MVSError, FloatingPointError):
    pass


class EmptyMatrix(MVSError, ValueError):
    pass


class DegenerateLabels(MVSError, ValueError):
    pass


class InfeasibleRates(MVSError, ValueError):
    pass
