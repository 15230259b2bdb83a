"""Exception types shared across the package."""


class FuncDictError(Exception):
    pass


class InvalidInput(FuncDictError, ValueError):
    pass


class InvalidConfig(FuncDictError, ValueError):
    pass


class InvalidState(FuncDictError, RuntimeError):
    pass


class NumericError(FuncDictError, FloatingPointError):
    """Raised when a computation produces non-finite values.

    ``layer`` is set by the model when the overflow can be attributed to a
    specific layer; ``sample_id`` by the trainer.
    """

    def __init__(self, msg, layer=None, sample_id=None):
        super().__init__(msg)
        self.layer = layer
        self.sample_id = sample_id


class SolverError(FuncDictError, ArithmeticError):
    pass
