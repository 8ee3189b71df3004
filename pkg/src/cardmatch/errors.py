"""Exception types raised across the package.

Every error carries enough context (row, column, key path) for the CLI to
print an actionable message and exit with status 1.
"""


class CardmatchError(Exception):
    """Base class for all package errors."""


class DataError(CardmatchError):
    pass


class MissingValue(DataError):
    def __init__(self, row, column):
        self.row, self.column = row, column
        super().__init__(f"missing value in row {row}, column {column!r}")


class DuplicateId(DataError):
    def __init__(self, unit_id):
        self.unit_id = unit_id
        super().__init__(f"duplicate unit id {unit_id!r}")


class UnknownColumn(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"column {name!r} not found in data file")


class ConstantCovariate(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"balance covariate {name!r} has zero pooled standard deviation")


class NonBinaryExposure(DataError):
    def __init__(self, row, value=None):
        self.row = row
        super().__init__(f"exposure in row {row} must be 0 or 1, got {value!r}")


class ConfigError(CardmatchError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, line, msg=""):
        self.line = line
        super().__init__(f"config syntax error at line {line}: {msg}")


class UnknownKey(ConfigError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"unknown config key {path!r}")


class InvalidTolerance(ConfigError):
    def __init__(self, name, value=None):
        self.name = name
        super().__init__(f"invalid tolerance for {name!r}: {value!r} (must be finite and >= 0)")


class MissingTargetMean(ConfigError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"target profile has no mean for balance covariate {name!r}")


class EmptyProblem(CardmatchError):
    def __init__(self):
        super().__init__("no exact-match stratum contains both exposed and unexposed units")


class TooLarge(CardmatchError):
    pass


class UnbalancedStratum(CardmatchError):
    pass


class InvalidConfig(ConfigError):
    pass
