"""Exception taxonomy shared by all itoreg modules."""


class ItoregError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ItoregError):
    """Invalid grid, schedule, or experiment configuration."""


class ContractViolation(ItoregError):
    """A caller broke a documented precondition (mismatched grids, A(0) != 0, ...)."""


class AdaptednessError(ContractViolation):
    """A random field tried to read driver values beyond its evaluation horizon."""


class SimulationError(ItoregError):
    """A simulation produced a non-finite value; the message names the node."""


class EvaluationError(ItoregError):
    """A flow or characteristic evaluation failed; the message names (t, x)."""


class CapabilityError(ItoregError):
    """An operation requires smoothness or metadata the object does not declare."""


class DataError(ItoregError):
    """Input samples are unusable (non-finite, empty where forbidden)."""
