class LogContrastError(Exception):
    pass


class LogContrastLoggerError(LogContrastError):
    pass


class LogContrastCompositionError(LogContrastError):
    pass


class NonPositivePartError(LogContrastCompositionError):
    """A part is zero, negative or not finite."""

    def __init__(
        self,
        index: int,
        value: float,
        *,
        row: int | None = None,
        column: str | None = None,
    ) -> None:
        self.index = index
        self.value = value
        self.row = row
        self.column = column
        where = f"part {index}" if column is None else f"column '{column}'"
        if row is not None:
            where = f"row {row}, {where}"
        super().__init__(
            f"Composition parts must be strictly positive ({where}: {value!r})."
        )


class TooFewPartsError(LogContrastCompositionError):
    pass


class RefIndexOutOfRangeError(LogContrastCompositionError):
    pass


class InvalidLogBaseError(LogContrastCompositionError):
    pass


class LogContrastDesignError(LogContrastError):
    pass


class MissingModeratorError(LogContrastDesignError):
    pass


class MissingOffsetError(LogContrastDesignError):
    pass


class InconsistentDError(LogContrastDesignError):
    pass


class MissingTimeKeysError(LogContrastDesignError):
    pass


class NotZeroSumError(LogContrastDesignError):
    pass


class NonPositiveResponseError(LogContrastDesignError):
    pass


class LogContrastFitError(LogContrastError):
    pass


class RankDeficientError(LogContrastFitError):
    pass


class DimensionMismatchError(LogContrastFitError):
    pass


class UnknownBlockError(LogContrastFitError):
    pass


class UnknownColumnError(LogContrastFitError):
    pass


class NotSoftModeError(LogContrastFitError):
    pass


class NotHardModeError(LogContrastFitError):
    pass


class SamplerDivergenceError(LogContrastFitError):
    pass


class NonIntegerCountError(LogContrastFitError):
    pass


class NegativeCountError(LogContrastFitError):
    pass


class NonConvergenceError(LogContrastFitError):
    pass


class LogContrastInterpretError(LogContrastError):
    pass


class NotLogScaleError(LogContrastInterpretError):
    pass


class NoModeratorError(LogContrastInterpretError):
    pass


class NotBase2Error(LogContrastInterpretError):
    pass


class LogContrastDataError(LogContrastError):
    pass


class MissingColumnError(LogContrastDataError):
    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"Missing column '{column}'.")


class ParseError(LogContrastDataError):
    def __init__(self, row: int, column: str, value: str) -> None:
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Could not parse {value!r} in row {row}, column '{column}'.")


class CheckFailedError(LogContrastError):
    pass
