class SplatError(Exception):
    """Base class for every error raised by the splat toolkit"""
    def __init__(self, message="splat toolkit error"):
        super().__init__(message)


class SceneFormatError(SplatError):
    """PLY payload does not match the expected vertex layout"""
    def __init__(self, prop, message=None):
        self.prop = prop
        super().__init__(message or f"malformed PLY property: {prop}")


class CameraFileError(SplatError):
    """Camera file cannot be parsed"""
    def __init__(self, message="malformed camera file"):
        super().__init__(message)


class PoseError(CameraFileError):
    """Camera rotation is too far from orthonormal to be repaired"""
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"camera '{name}' has a non-orthonormal rotation")


class DegenerateRotationError(SplatError):
    """Quaternion with zero norm"""
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"rotation_params row {index} has zero norm")


class DegenerateSplatError(SplatError):
    """Projected 2D covariance is singular"""
    def __init__(self, message="projected covariance is singular"):
        super().__init__(message)


class DimensionMismatchError(SplatError):
    """Two images or arrays that must agree in shape do not"""
    def __init__(self, left, right, message=None):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(message or f"dimension mismatch: {self.left} vs {self.right}")


class ShapeMismatchError(DimensionMismatchError):
    """Parameter and gradient shapes disagree"""


class UndefinedLossError(SplatError):
    """Loss has no value for the given input (e.g. empty scene)"""
    def __init__(self, message="loss is undefined for an empty scene"):
        super().__init__(message)


class ConfigError(SplatError):
    """Invalid configuration key or value"""
    def __init__(self, message="invalid configuration"):
        super().__init__(message)


class SchedulerError(SplatError):
    """Base class for scheduler failures"""


class TaskRegistrationError(SchedulerError):
    """Task cannot be registered with the requested stage/roles"""
    def __init__(self, task, message=None):
        self.task = task
        super().__init__(message or f"cannot register task '{task}'")


class TaskFailedError(SchedulerError):
    """A scheduled task raised during dispatch"""
    def __init__(self, iteration, task, cause=None):
        self.iteration = iteration
        self.task = task
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"task '{task}' failed at iteration {iteration}{detail}")


class CodecError(SplatError):
    """Base class for quantizer / entropy coder / bundle failures"""


class NonFiniteInputError(CodecError):
    def __init__(self, message="quantizer input contains non-finite values"):
        super().__init__(message)


class EmptyStreamError(CodecError):
    def __init__(self, message="cannot build a frequency table from an empty stream"):
        super().__init__(message)


class ZeroFrequencyError(CodecError):
    def __init__(self, symbol):
        self.symbol = symbol
        super().__init__(f"symbol {symbol} has zero frequency in the model")


class CorruptStreamError(CodecError):
    def __init__(self, message="corrupt entropy-coded stream"):
        super().__init__(message)


class BundleFormatError(CodecError):
    def __init__(self, message="malformed bundle"):
        super().__init__(message)


class BadMagicError(BundleFormatError):
    def __init__(self, found=b""):
        super().__init__(f"bad magic {found!r}, expected b'SPWZ'")


class CrcMismatchError(BundleFormatError):
    def __init__(self, stored, computed):
        self.stored = stored
        self.computed = computed
        super().__init__(f"CRC mismatch: stored {stored:08x}, computed {computed:08x}")


class DirectoryError(BundleFormatError):
    def __init__(self, message="section directory out of bounds"):
        super().__init__(message)


class UnknownCoderError(BundleFormatError):
    def __init__(self, coder):
        super().__init__(f"unknown entropy coder: {coder!r}")


class StageError(SplatError):
    """Failure inside one stage of a command-line pipeline"""
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class FixtureMismatchError(SplatError):
    def __init__(self, fixture_id, diff):
        self.fixture_id = fixture_id
        self.diff = diff
        super().__init__(f"fixture '{fixture_id}' mismatch: {diff}")
