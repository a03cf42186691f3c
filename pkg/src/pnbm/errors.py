"""Exception types raised by the library.

The CLI maps these onto process exit codes, so each class carries the
code it should produce.
"""


class PNBMError(Exception):
    exit_code = 1


class InputError(PNBMError):
    """Bad input data or arguments."""

    exit_code = 2


class ParseError(InputError):
    def __init__(self, path, line_no, line):
        self.path = path
        self.line_no = line_no
        self.line = line
        super().__init__(f"{path}:{line_no}: cannot parse rating line {line!r}")


class EmptyDatasetError(InputError):
    pass


class DuplicateRatingError(InputError):
    def __init__(self, user, item, line_no=None):
        self.user = user
        self.item = item
        self.line_no = line_no
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate rating for user={user} item={item}{where}")


class ConfigError(InputError):
    pass


class DegenerateRangeError(PNBMError):
    pass


class DivergenceError(PNBMError):
    """Non-finite parameter or objective during training.

    ``history`` holds the epochs completed before the failure.
    """

    exit_code = 3

    def __init__(self, message, epoch=None, sample=None, history=None):
        self.epoch = epoch
        self.sample = sample
        self.history = history
        super().__init__(message)


class MismatchError(PNBMError):
    """Checkpoint does not match the corpus it is evaluated on."""

    exit_code = 4


class EmptyResultError(PNBMError):
    exit_code = 5
