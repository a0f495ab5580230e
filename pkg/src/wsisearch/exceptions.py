"""Exception types shared across the engine."""


class WsiSearchError(Exception):
    """Base class for all engine errors."""


class FormatError(WsiSearchError):
    """A file violates its binary or JSON format contract.

    ``offset`` is the byte offset of the violation when it is known.
    """

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyInputError(WsiSearchError):
    """An operation that needs at least one patch or embedding got none.

    This is the "missed WSI" pathway: a slide whose patch filtering
    retains nothing cannot produce a montage, a mosaic, or an atlas
    record, and is counted rather than indexed.
    """


class NotFoundError(WsiSearchError):
    """A referenced wsi_id does not exist in the atlas."""
