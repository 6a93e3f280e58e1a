"""Exception hierarchy shared by all ihcquant modules."""


class IhcError(Exception):
    """Base class for all ihcquant errors."""


# --- slide reading -----------------------------------------------------------

class UnreadableFile(IhcError):
    pass


class UnsupportedFormat(IhcError):
    pass


class CorruptPyramid(IhcError):
    """Level dimensions inconsistent with their downsample factors."""


class LevelOutOfRange(IhcError):
    pass


class EmptyTissueMaskWarning(UserWarning):
    """Tissue mask selected zero patches (warning, not an error)."""


# --- instance / mask ingestion ----------------------------------------------

class BadLabelImage(IhcError):
    pass


class SchemaMismatch(IhcError):
    pass


class UnreadableMask(IhcError):
    pass


class FrameMissing(IhcError):
    """Mask file does not declare the pyramid level it lives in."""


class DimensionMismatch(IhcError):
    pass


# --- stain classification ----------------------------------------------------

class EmptyMask(IhcError):
    pass


class MissingClass(IhcError):
    pass


class NonSeparableClasses(IhcError):
    pass


# --- scoring -----------------------------------------------------------------

class EmptySlide(IhcError):
    """No tumor nuclei to score; a QC rejection, not a zero score."""


# --- metrics -----------------------------------------------------------------

class LengthMismatch(IhcError):
    pass


class EmptyInput(IhcError):
    pass


class SingleClass(IhcError):
    pass


class EmptyMatrix(IhcError):
    pass


class DegenerateMarginals(IhcError):
    pass


class EmptyVotes(IhcError):
    pass


# --- HER2 --------------------------------------------------------------------

class EmptyRegion(IhcError):
    pass


class DegenerateDataset(IhcError):
    pass


class FoldTooSmall(IhcError):
    pass


# --- synthesis ---------------------------------------------------------------

class PlacementImpossible(IhcError):
    """Nucleus placement failed after bounded rejection-sampling retries."""


# --- CLI ---------------------------------------------------------------------

class ConfigInvalid(IhcError):
    """Raised with a message naming the offending config key."""
