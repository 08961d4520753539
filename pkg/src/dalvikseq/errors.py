"""Exception hierarchy shared by all modules."""


class DalvikSeqError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 1


class UsageError(DalvikSeqError):
    """Bad input or configuration supplied by the caller."""

    exit_code = 2


class EmptyTrainingSet(DalvikSeqError):
    pass
