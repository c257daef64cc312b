"""Exception hierarchy shared by all modules."""


class CafedError(Exception):
    """Base class for every error raised by cafedsim."""


class ParameterError(CafedError, ValueError):
    """An argument lies outside its admissible range."""


class DegenerateChainError(CafedError, ValueError):
    """A Markov chain has no unique stationary law or is not ergodic."""


class SizeError(CafedError, ValueError):
    """A brute-force routine was asked to handle a problem that is too large."""


class ShapeError(CafedError, ValueError):
    """Array dimensions are inconsistent."""


class DataError(CafedError, ValueError):
    """A dataset is empty or otherwise unusable."""


class IdxFormatError(CafedError, ValueError):
    """An IDX file is malformed; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConvergenceError(CafedError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message}; final gradient norm {grad_norm:.3e}")
        self.grad_norm = grad_norm


class DegenerateWeightsError(CafedError, ValueError):
    """Aggregation weights have an empty effective support (sum pi_k q_k == 0)."""


class ProtocolError(CafedError, ValueError):
    """A message violates the round protocol (e.g. a loss from an inactive client)."""


class SolverError(CafedError, RuntimeError):
    """The KKT weight solver found no consistent active set."""
