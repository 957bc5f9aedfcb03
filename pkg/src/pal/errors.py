"""Exception hierarchy shared by all pal modules."""


class PalError(Exception):
    """Base class for every error raised by pal."""


class DataError(PalError):
    """A file or in-memory artifact violated a format or value constraint."""


class UsageError(PalError):
    """The caller combined arguments in an unsupported way."""
