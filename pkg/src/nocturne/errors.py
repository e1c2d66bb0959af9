class NocturneError(Exception):
    """Base class for engine errors."""


class DegenerateViewError(NocturneError):
    """Surface faces away from the viewer; specular terms are skipped."""


class MissingPoseError(NocturneError):
    pass


class SceneFormatError(NocturneError):
    pass


class VersionMismatchError(SceneFormatError):
    pass


class UnknownCameraError(NocturneError):
    pass


class StaleCacheError(NocturneError):
    """Backward called with inputs that differ from the cached forward pass."""


class ShapeMismatchError(NocturneError, ValueError):
    pass


class ImageFormatError(NocturneError):
    pass


class MissingPriorError(NocturneError):
    pass


class NonFiniteLossError(NocturneError):
    pass
