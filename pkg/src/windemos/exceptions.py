"""Exception types raised by windemos."""


class WindEmosError(Exception):
    """Base class for all package errors."""


class DomainError(WindEmosError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InputError(WindEmosError, ValueError):
    """Malformed or inconsistent user input."""


class DegenerateDistributionError(WindEmosError, ValueError):
    """A link function produced a predictive law with zero scale."""


class UndefinedSkillError(WindEmosError, ZeroDivisionError):
    """The reference mean score is zero, so a skill score is undefined."""


class InsufficientTrainingData(WindEmosError):
    """Too few usable forecast-observation pairs to fit a model.

    Callers are expected to catch this and apply their fallback policy.
    """


class FitFailedError(WindEmosError, RuntimeError):
    """The objective was non-finite at every probe of the optimizer."""


class SchemaError(WindEmosError, ValueError):
    """A data file does not conform to its schema."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
