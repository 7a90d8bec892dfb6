"""Exception types shared across the package."""


class CvlError(Exception):
    """Base class for all cvlattice errors."""


class MissingRoot(CvlError):
    pass


class EmptyManifest(UserWarning):
    """Shard discovery matched nothing. Emitted as a warning, never raised."""


class ZeroPartitions(CvlError, ValueError):
    pass


class InvalidGrid(CvlError, ValueError):
    pass


class OutOfBounds(CvlError, ValueError):
    pass


class ComponentOutOfRange(CvlError, ValueError):
    pass


class IndexOverflow(CvlError, ValueError):
    pass


class GridMismatch(CvlError, ValueError):
    pass


class DimsMismatch(CvlError, ValueError):
    pass


class NonFiniteValue(DimsMismatch):
    pass


class ContainerError(CvlError):
    pass


class BadMagic(ContainerError):
    pass


class VersionUnsupported(ContainerError):
    pass


class TruncatedFile(ContainerError):
    pass


class BadChannel(CvlError, ValueError):
    pass


class TaskFailed(CvlError):
    def __init__(self, run_index, cause):
        super().__init__(f"task failed on run {run_index}: {cause!r}")
        self.run_index = run_index
        self.cause = cause
