"""Exception types shared across the package."""


class LdsfError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(LdsfError, ValueError):
    pass


class InvalidInputError(LdsfError, ValueError):
    pass


class DimensionError(LdsfError, ValueError):
    pass


class DegenerateInputError(LdsfError, ValueError):
    pass


class NoRegionError(LdsfError):
    """No acceptable candidate region is left; ends the extraction loop."""


class InvalidStartError(LdsfError, ValueError):
    pass


class EmptyGraphError(LdsfError, ValueError):
    pass


class InvalidGraphError(LdsfError, ValueError):
    pass


class InvalidTopologyError(LdsfError, ValueError):
    pass


class InvalidProtocolError(LdsfError, ValueError):
    pass


class InvalidCheckpointError(LdsfError, ValueError):
    pass
