"""
Error taxonomy for the debiasing toolkit

Every error derives from AdnError and from the builtin it most resembles,
so callers catching ValueError / RuntimeError keep working. Errors with
context fields rebuild themselves from their constructor arguments when
pickled, since sweep jobs raise them inside worker processes.
"""

from typing import Optional


class AdnError(Exception):
    """Base class for all toolkit errors"""


class ConfigurationError(AdnError, ValueError):
    """Invalid configuration, hyperparameter or network construction"""


class InputError(AdnError, ValueError):
    """Inputs with the wrong shape, size or content"""


class UndefinedMetricError(AdnError, ValueError):
    """Metric is undefined for the given input (e.g. AUC with one class)"""


class TrainingError(AdnError, RuntimeError):
    """Non-finite loss or gradient, or a model that cannot be fitted"""

    def __init__(
        self,
        message: str,
        batch_index: Optional[int] = None,
        epoch: Optional[int] = None,
    ):
        self.message = message
        self.batch_index = batch_index
        self.epoch = epoch
        where = []
        if epoch is not None:
            where.append(f"epoch={epoch}")
        if batch_index is not None:
            where.append(f"batch={batch_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")

    def __reduce__(self):
        return (self.__class__, (self.message, self.batch_index, self.epoch))


class SimulationError(AdnError, RuntimeError):
    """Feedback-loop simulation aborted"""

    def __init__(self, message: str, day: Optional[int] = None):
        self.message = message
        self.day = day
        super().__init__(f"Simulation aborted on day {day}: {message}")

    def __reduce__(self):
        return (self.__class__, (self.message, self.day))


class DatasetParseError(AdnError, ValueError):
    """Malformed dataset file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}")

    def __reduce__(self):
        return (self.__class__, (self.message, self.line))
