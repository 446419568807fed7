"""Exception hierarchy shared by every module of the package."""


class DHNError(Exception):
    """Base class for all package errors."""


# network model
class DanglingReference(DHNError):
    pass


class DisconnectedGraph(DHNError):
    pass


class RootTerminalViolation(DHNError):
    pass


class InvalidNetwork(DHNError):
    """Any other structural defect of a network description."""


# hydraulics / thermal
class NonConvergence(DHNError):
    pass


class InconsistentFlow(DHNError):
    pass


# buildings
class EnvelopeViolation(DHNError):
    def __init__(self, building_id, value, lower, upper):
        self.building_id = building_id
        self.value = value
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"building {building_id!r}: used flexibility {value:.6g} J "
            f"outside [{lower:.6g}, {upper:.6g}] J"
        )


# partitioner
class IsolatedNode(DHNError):
    pass


class EigensolverFailure(DHNError):
    pass


class InfeasiblePartition(DHNError):
    pass


# coordinator
class NoFeasibleSelection(DHNError):
    pass


# harness
class TrackingInfeasible(DHNError):
    pass


class StepInfeasible(DHNError):
    def __init__(self, step, message):
        self.step = step
        super().__init__(f"step {step}: {message}")


class ScenarioMismatch(DHNError):
    pass
