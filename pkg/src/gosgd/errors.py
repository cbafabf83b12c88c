"""Exception hierarchy shared across the package."""


class GossipError(Exception):
    pass


class DimensionError(GossipError, ValueError):
    """Parameter vectors of different lengths were combined."""


class DomainError(GossipError, ValueError):
    """A scalar argument fell outside its admissible range."""


class ConfigError(GossipError, ValueError):
    pass


class IngestionError(GossipError):
    """A dataset file could not be read. ``row`` is 1-based, header is row 1."""

    def __init__(self, message, path=None, row=None):
        self.path = path
        self.row = row
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f":{row}"
            where += ": "
        super().__init__(where + message)


class DivergenceError(GossipError, ArithmeticError):
    """Raised when a parameter vector picks up a NaN or Inf.

    ``records`` holds whatever metrics rows were collected before the abort.
    """

    def __init__(self, message, iteration=None, worker=None, records=None):
        self.iteration = iteration
        self.worker = worker
        self.records = list(records or [])
        super().__init__(message)


class DeadlockError(GossipError, RuntimeError):
    pass
