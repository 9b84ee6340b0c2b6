class ScaWaveError(Exception):
    """Базовая ошибка проекта"""
    exit_code = 1


class ContractError(ScaWaveError):
    """Нарушено предусловие операции"""


class DimensionError(ContractError):
    """Несовместимые формы тензоров"""


class NonFiniteError(ContractError):
    """NaN/Inf на выходе прямого прохода"""


class ConfigError(ScaWaveError):
    """Неизвестный ключ, неверное значение или несовпадение стратегии"""


class DataFormatError(ScaWaveError):
    """Повреждённый или обрезанный файл данных"""
    exit_code = 2


class SchemaVersionError(DataFormatError):
    pass
