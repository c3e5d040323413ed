"""Exception types shared across the package."""


class AmpfError(Exception):
    pass


class FlowKeyMismatch(AmpfError, ValueError):
    """Packet does not belong to the flow record it was applied to."""


class OrderingError(AmpfError, ValueError):
    """Packet timestamp earlier than the last one folded into a record."""


class InsufficientData(AmpfError, ValueError):
    pass


class UndefinedSplit(AmpfError, ValueError):
    pass


class EmptyDataset(AmpfError, ValueError):
    pass


class MeasurementError(AmpfError, ValueError):
    """A latency probe produced a non-positive latency."""


class DegenerateNetwork(AmpfError, ValueError):
    pass


class TopologyError(AmpfError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AdmissionRefused(AmpfError):
    pass


class Unreachable(AmpfError):
    pass


class NoFeasiblePath(AmpfError):
    pass


class ConfigError(AmpfError, ValueError):
    pass


class TraceParseError(AmpfError, ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno
