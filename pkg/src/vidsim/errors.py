"""Exception types shared across the package."""


class VidsimError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(VidsimError, ValueError):
    """Operands have incompatible shapes."""


class RankOverflowError(VidsimError, ValueError):
    """An operation would produce a tensor of more than four axes."""


class TapeError(VidsimError, RuntimeError):
    """Misuse of a gradient tape (reuse, or output not recorded on it)."""


class SpatialExtentError(VidsimError, ValueError):
    """A spatial extent is too small for the requested operation."""


class RankDeficiencyError(VidsimError, ValueError):
    """Covariance is rank-deficient and no dimensionality reduction was requested."""


class EmptyMatrixError(VidsimError, ValueError):
    """A reduction was requested on an empty similarity matrix."""


class OverlapError(VidsimError, ValueError):
    """A snippet cannot satisfy its required overlap with an annotated interval."""


class EmptyPoolError(VidsimError, ValueError):
    """No positive pair qualifies for triplet-pool construction."""


class DivergenceError(VidsimError, RuntimeError):
    """Training loss became non-finite."""


class NoRelevantItemsError(VidsimError, ValueError):
    """Average precision is undefined without at least one relevant item."""


class FormatError(VidsimError, ValueError):
    """Base class for file-format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """File declares an unsupported format version."""


class TruncatedFileError(FormatError):
    """File is shorter than its header promises."""


class ChecksumError(FormatError):
    """Payload hash does not match the trailer."""


class ManifestError(VidsimError, ValueError):
    """A dataset manifest record is malformed; the message names the line."""
