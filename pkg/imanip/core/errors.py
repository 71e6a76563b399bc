class ImanipError(Exception):
    """Base class for every error raised by imanip."""


class DimensionError(ImanipError, ValueError):
    pass


class ContractError(ImanipError, ValueError):
    pass


class LabelIndexError(ImanipError, IndexError):
    pass


class NonFiniteError(ImanipError, FloatingPointError):
    pass


class GradCheckError(ContractError):
    def __init__(self, message: str, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class RegistryError(ImanipError, ValueError):
    pass


class ConfigError(ImanipError, ValueError):
    pass


class ScheduleParseError(ConfigError):
    pass


class UnknownSkillError(ImanipError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown skill"


class LearnabilityGateError(ImanipError):
    pass


class CodecError(ImanipError, ValueError):
    pass
