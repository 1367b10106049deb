"""Exception hierarchy.

Each class carries the process exit code the CLI reports for it.
"""


class OTFError(Exception):
    exit_code = 1


class ConfigError(OTFError, ValueError):
    exit_code = 2


class DataError(OTFError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class DegenerateGroupError(DataError):
    pass


class DimensionError(OTFError, ValueError):
    exit_code = 3


class NumericError(OTFError, ArithmeticError):
    exit_code = 4


class InfeasibleError(NumericError):
    pass


class TrainingError(NumericError):
    def __init__(self, message, epoch=None, batch=None):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.epoch = epoch
        self.batch = batch


class LpSizeError(ConfigError):
    pass
