"""
Exception hierarchy for the maskSLIC toolkit.

Every error carries a short machine-readable ``code`` so the command line
surface can print ``ERROR <CODE>: <message>`` without inspecting types.
"""


class MaskSlicError(ValueError):
    """Base class for all data errors raised by the library."""

    code = "MASKSLIC_ERROR"

    def __str__(self) -> str:
        message = super().__str__()
        return message or self.__class__.__doc__ or self.code


class InvalidVolume(MaskSlicError):
    """Volume data, spacing or shape is not acceptable."""

    code = "INVALID_VOLUME"


class InvalidParams(MaskSlicError):
    """Segmentation parameters are out of bounds."""

    code = "INVALID_PARAMS"


class DimsMismatch(MaskSlicError):
    """Grids that must be congruent have different dimensions."""

    code = "DIMS_MISMATCH"


class EmptyMask(MaskSlicError):
    """The mask has no foreground voxel."""

    code = "EMPTY_MASK"


class OutOfBounds(MaskSlicError):
    """A translated foreground voxel would leave the grid."""

    code = "OUT_OF_BOUNDS"


class TooManySeeds(MaskSlicError):
    """More regions were requested than there are mask voxels."""

    code = "TOO_MANY_SEEDS"


class NoSeedsInMask(MaskSlicError):
    """No grid seed falls inside the mask."""

    code = "NO_SEEDS_IN_MASK"


class DegenerateData(MaskSlicError):
    """Input has zero variance where variance is required."""

    code = "DEGENERATE_DATA"


class TooFewItems(MaskSlicError):
    """Fewer items than requested clusters."""

    code = "TOO_FEW_ITEMS"


class BadSpec(MaskSlicError):
    """Phantom descriptor is invalid."""

    code = "BAD_SPEC"


class ZeroBaselineError(MaskSlicError, ZeroDivisionError):
    """Reference error is zero, the relative increase is unbounded."""

    code = "DIVISION_BY_ZERO"


class MslcFormatError(MaskSlicError):
    """Volume file does not follow the MSLC layout."""

    code = "FORMAT_ERROR"


class BadMagic(MslcFormatError):
    """File does not start with the MSLC magic bytes."""

    code = "BAD_MAGIC"


class VersionUnsupported(MslcFormatError):
    """MSLC format version is not supported."""

    code = "VERSION_UNSUPPORTED"


class TruncatedPayload(MslcFormatError):
    """File is shorter than its header promises."""

    code = "TRUNCATED_PAYLOAD"


class UnsupportedFormat(MslcFormatError):
    """File extension or sample type is not supported."""

    code = "UNSUPPORTED_FORMAT"
