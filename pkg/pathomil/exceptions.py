"""
Module provides the exceptions raised by pathomil.

All exceptions derive from built-in exception types, so callers catching e.g. `ValueError`
keep working.
"""


class FormatError(ValueError):
    """
    Raised if a binary or text file (BAG1, PMD1, PGB1, PPM, PGM) is malformed.

    Parameters
    ----------
    msg : `str`
        Error message.
    offset : `int`, optional
        Byte offset at which parsing failed.

        The default is None.
    """
    def __init__(self, msg: str, offset: int = None):
        self.offset = offset
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)


class ManifestError(ValueError):
    """
    Raised if a dataset manifest is invalid -- e.g. duplicated slide IDs, unknown splits,
    or missing bag files.
    """


class LeakageError(ValueError):
    """
    Raised if a slide crosses the separation between training and test data.
    """


class TrainingError(RuntimeError):
    """
    Raised if training fails -- e.g. because the loss became non-finite.

    Parameters
    ----------
    msg : `str`
        Error message.
    fold : `int`, optional
        Index of the cross-validation fold in which the error occurred.

        The default is None.
    """
    def __init__(self, msg: str, fold: int = None):
        self.fold = fold
        if fold is not None:
            msg = f"fold {fold}: {msg}"
        super().__init__(msg)


class NumericalError(ArithmeticError):
    """
    Raised if a function evaluation is not finite.
    """


class UsageError(ValueError):
    """
    Raised if the command line interface is used incorrectly.
    """
