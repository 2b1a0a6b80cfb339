"""Exception hierarchy shared by every uvq module."""


class UvqError(Exception):
    """Base class for all uvq errors."""


class ShapeError(UvqError, ValueError):
    pass


class StateError(UvqError, RuntimeError):
    pass


class ParameterError(UvqError, ValueError):
    pass


class SamplingError(UvqError, ValueError):
    pass


class TrainingError(UvqError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ContractError(UvqError, RuntimeError):
    pass


class EncodingError(UvqError, ValueError):
    pass


class DecodeError(UvqError, ValueError):
    pass
