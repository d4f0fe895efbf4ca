"""Exception hierarchy shared across the package.

Each class carries the CLI exit code it maps to.
"""


class UorError(Exception):
    exit_code = 1


class InvalidArgumentError(UorError, ValueError):
    exit_code = 2


class InconsistentDivisionError(InvalidArgumentError):
    pass


class DegenerateTruncationError(UorError, RuntimeError):
    exit_code = 3


class NumericalFailureError(UorError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, step=None, batch_id=None, block_id=None):
        super().__init__(message)
        self.step = step
        self.batch_id = batch_id
        self.block_id = block_id


class CapacityError(UorError):
    exit_code = 4
