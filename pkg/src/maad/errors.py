"""Exception hierarchy shared by all modules."""


class MaadError(Exception):
    """Base class for every error raised by this package."""


# core
class FrameOutOfRange(MaadError, IndexError):
    pass


class MissingTarget(MaadError):
    pass


class SceneTooShort(MaadError):
    pass


class InvalidScene(MaadError, ValueError):
    pass


# datagen
class InfeasibleScript(MaadError):
    def __init__(self, message, scene_id=None):
        if scene_id is not None:
            message = f"{scene_id}: {message}"
        super().__init__(message)
        self.scene_id = scene_id


class ConfigError(MaadError, ValueError):
    pass


# dataio
class IoFailure(MaadError, OSError):
    pass


class ParseError(MaadError, ValueError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SchemaError(MaadError, ValueError):
    pass


class GridError(MaadError, ValueError):
    pass


class VersionMismatch(MaadError):
    pass


class ArchitectureMismatch(MaadError):
    pass


# diffcalc
class ShapeMismatch(MaadError, ValueError):
    def __init__(self, op, expected, got):
        super().__init__(f"{op}: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


# models
class CenterUninitialized(MaadError):
    pass


class EmptyTrainingSet(MaadError):
    pass


class EmptyMap(UserWarning):
    """No lane node lies within the lane-to-actor radius; map term is zero."""


# oneclass
class SolverDivergence(MaadError):
    def __init__(self, iterations, residual):
        super().__init__(f"SMO did not converge after {iterations} iterations (KKT residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class DegenerateLabels(MaadError):
    pass


# eval
class SingleClass(MaadError):
    pass


class NoPositives(MaadError):
    pass


class MissingLabel(MaadError):
    def __init__(self, scene_id, frame):
        super().__init__(f"scene {scene_id!r} has no label for frame {frame}")
        self.scene_id = scene_id
        self.frame = frame
