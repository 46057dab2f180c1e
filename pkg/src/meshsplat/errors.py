"""Exception types shared across the package."""


class MeshsplatError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(MeshsplatError, ValueError):
    """An argument violates a documented precondition."""


class NotFoundError(MeshsplatError, KeyError):
    """A referenced id (object, vertex, camera, material) does not exist."""

    def __str__(self) -> str:
        # KeyError quotes its arg; keep a plain message.
        return self.args[0] if self.args else ""


class EmptySceneError(MeshsplatError, ValueError):
    """An operation that needs kernels was given an empty scene."""


class CatalogMissError(MeshsplatError, KeyError):
    """A classifier or user named a material absent from the catalog."""

    def __str__(self) -> str:
        return self.args[0] if self.args else ""


class SimulationDivergedError(MeshsplatError, RuntimeError):
    """Positions became non-finite during a substep."""

    def __init__(self, message: str, time: float = 0.0, constraint: int = -1):
        super().__init__(message)
        self.time = time
        self.constraint = constraint


class ParseError(MeshsplatError, ValueError):
    """Malformed input file; carries location info (byte offset or line)."""

    def __init__(self, message: str, *, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.line = line


class UnsupportedVersionError(MeshsplatError, ValueError):
    """A session/script header declares a version this build cannot read."""
