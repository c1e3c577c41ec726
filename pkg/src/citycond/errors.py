class ContractError(ValueError):
    """A caller broke an operation's documented precondition."""


class UnsupportedVariantError(ContractError):
    pass


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class CsvParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"non-finite gradient in parameter '{parameter}'")


class SchemaMismatchError(ValueError):
    pass
