class LamgError(Exception):
    """Base class for every error raised by the package"""


class InvalidMesh(LamgError):
    """Boundary or volume mesh fails validation"""


class RejectionBudgetExceeded(LamgError):
    """Interior rejection sampling accepted too few candidates"""


class DegenerateElement(LamgError):
    """A tetrahedron has (near) zero or negative volume"""


class NoConvergence(LamgError):
    """Iterative linear solver did not reach its tolerance"""


class PointOutsideMesh(LamgError):
    """Point location failed for a query point"""


class ZeroReference(LamgError):
    """Reference solution norm too small for a relative error"""


class MeshingFailed(LamgError):
    """Mesher could not produce a valid tetrahedral mesh"""


class FieldTooFine(LamgError):
    """Requested element size is below the memory guard"""


class TrainingDiverged(LamgError):
    """Network output or loss became NaN/Inf"""


class ParamsFormatError(LamgError):
    """Serialized parameter file is malformed"""


class LamgWarning(UserWarning):
    """Base class for non-fatal conditions"""


class QualityCollapse(LamgWarning):
    pass


class IsolatedNode(LamgWarning):
    pass


class DegenerateRange(LamgWarning):
    pass
