"""Exception hierarchy shared across the package."""


class MsfracError(Exception):
    """Base class for all library errors."""


class GeometryError(MsfracError):
    """Invalid mesh or fracture geometry."""


class PolylineOffGrid(GeometryError):
    """A fracture polyline vertex does not coincide with a fine-grid node."""


class NonAdjacentSegment(GeometryError):
    """Consecutive polyline vertices are not connected by fine-grid edges."""


class GammaNotNormalized(MsfracError):
    """Fracture weights do not sum to one."""


class NodeNotFound(MsfracError):
    """A requested point does not coincide with a fine-grid node."""


class SingularLocalSystem(MsfracError):
    """A local interior solve hit a singular factorization."""


class RankDeficient(MsfracError):
    """Randomized snapshots do not span the requested dimension."""


class SingularGram(MsfracError):
    """Snapshot Gram matrix is numerically singular beyond repair."""


class SelectionEmpty(UserWarning):
    """A neighborhood received zero basis functions under threshold selection."""


class SolverFailure(MsfracError):
    """A sparse factorization or linear solve failed."""


class ZeroReference(MsfracError):
    """Relative norm requested against a (numerically) zero reference."""


class NegativeConcentration(MsfracError):
    """A concentration state went negative; the linearization is invalid."""


class ConfigInvalid(MsfracError):
    """Configuration rejected; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
