"""Exception types for the client package."""


class ClientError(Exception):
    """Base class for everything this package raises on purpose."""


class FormatError(ClientError):
    """A file is missing or structurally not what its format promises."""


class IntegrityError(ClientError):
    """Contents disagree with a checksum, token, or count stored beside them."""
