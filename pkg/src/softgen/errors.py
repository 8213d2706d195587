"""Exception types shared across softgen modules."""


class SoftGenError(Exception):
    """Base class for all softgen errors."""


class DegenerateMatrix(SoftGenError):
    """Matrix too close to singular for a rotation to be extracted."""


class DegenerateInput(SoftGenError):
    """Point set is too small or too degenerate for rigid alignment."""


class ShapeMismatch(SoftGenError):
    """Point sets have incompatible sizes for correspondence-based fitting."""


class NonConvergence(SoftGenError):
    """Iterative registration produced a non-finite cost."""


class NumericalBlowup(SoftGenError):
    """Simulation state left the sane range (NaN or |coordinate| > 100 m)."""


class UnknownObject(SoftGenError):
    """Requested object id does not exist in the world."""


class MissingAnnotations(SoftGenError):
    """Annotated segmentation requested but the demo carries no annotations."""


class MissingSnapshots(SoftGenError):
    """Demo carries no object snapshots and no replay callback was given."""


class EmptySegment(SoftGenError):
    """A segment boundary would produce a zero-length segment."""


class InconsistentSubtaskCount(SoftGenError):
    """Source demos do not segment into the same number of subtasks."""


class ScriptFailed(SoftGenError):
    """A scripted source demonstration did not pass its success predicate."""


class SchemaMismatch(SoftGenError):
    """Serialized record does not match the expected schema."""


class IoError(SoftGenError):
    """Failed to read or write a dataset or demo file."""
