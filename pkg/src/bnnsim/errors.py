"""Exception hierarchy shared by all simulator modules."""


class SimError(Exception):
    """Base class for every error raised by bnnsim."""


class ShapeError(SimError, ValueError):
    """Tensor, layer or network shapes are inconsistent."""


class BusError(SimError):
    """A memory access touched an unmapped address."""


class AllocationError(SimError):
    """Not enough free space in the memory kind the policy requires."""


class DomainError(SimError, ValueError):
    """An argument is outside the range a model is defined on."""


class InvalidStateError(SimError):
    """An object was driven into a state it cannot leave (e.g. an all-zero LFSR)."""


class SingularFitError(SimError):
    """A least-squares fit has no unique solution."""


class ConfigError(SimError):
    """An experiment configuration is malformed or inconsistent."""


class FormatError(SimError):
    """A model, dataset or anchor file could not be parsed."""
