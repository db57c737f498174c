"""Exception hierarchy shared by every module of the package."""


class DeepGATError(Exception):
    """Base class for all errors raised by deepgat."""


class InputError(DeepGATError, ValueError):
    """Malformed or out-of-range user input (node ids, files, arrays)."""


class ContractError(DeepGATError, ValueError):
    """A precondition of an operation was violated (shapes, ranges, modes)."""


class DomainError(DeepGATError, ValueError):
    """A mathematical domain restriction was violated."""


class ConfigError(DeepGATError, ValueError):
    """Inconsistent model, training or synthetic-data configuration."""


class LabelLeakageError(ContractError):
    """Label matrix carries rows for nodes outside the training mask."""


class PathCountOverflowError(DeepGATError, OverflowError):
    """An exact path count does not fit into a 64-bit integer."""

    def __init__(self, node, length, value):
        self.node = node
        self.length = length
        self.value = value
        super().__init__(
            f"path count for node {node} at length {length} overflows int64 "
            f"({value.bit_length()} bits)"
        )


class NonFiniteError(DeepGATError, FloatingPointError):
    """NaN or Inf produced by a forward computation."""


class DivergenceError(DeepGATError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, param_norms):
        self.epoch = epoch
        self.param_norms = dict(param_norms)
        norms = ", ".join(f"{k}={v:.3g}" for k, v in self.param_norms.items())
        super().__init__(f"non-finite loss at epoch {epoch}; parameter norms: {norms}")


class NotFittedError(DeepGATError, AttributeError):
    """An estimator or model was used before training."""
