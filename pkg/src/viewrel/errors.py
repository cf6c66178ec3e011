"""Exception hierarchy shared by all viewrel modules."""


class ViewrelError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ViewrelError):
    """An input value violates a documented invariant."""


class EmptyGeometryError(ValidationError):
    """A geometric operation received an empty point set."""


class CapacityError(ViewrelError):
    """Procedural placement could not satisfy the requested density."""


class FormatError(ViewrelError):
    """A file does not conform to one of the documented formats."""


class VersionError(FormatError):
    """A file declares an unsupported format version."""


class ChecksumError(FormatError):
    """Stored checksum or determinism token does not match the content."""
