"""Exception hierarchy shared across the simulator."""


class FemtosimError(Exception):
    """Base class for all simulator errors."""


class InvalidParameterError(FemtosimError, ValueError):
    pass


class InvalidTopologyError(FemtosimError, ValueError):
    pass


class InvalidDeploymentError(FemtosimError, ValueError):
    pass


class InvalidPlanError(FemtosimError, ValueError):
    pass


class NotFoundError(FemtosimError, KeyError):
    pass


class ProtocolViolation(FemtosimError):
    """An event was fed to a handover state machine in a state that does not accept it."""


class SchedulingError(FemtosimError, ValueError):
    pass


class ConfigurationError(FemtosimError, ValueError):
    pass


class ScenarioError(FemtosimError, ValueError):
    """Scenario file failed validation.

    ``errors`` maps each offending key to a short message.
    """

    def __init__(self, errors):
        self.errors = dict(errors)
        detail = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(f"invalid scenario ({detail})")
