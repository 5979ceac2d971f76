"""Exception types shared by the protocol, store and baselines."""


class ProtocolError(Exception):
    pass


class FrameTooLarge(ProtocolError, ValueError):
    pass


class MalformedFrame(ProtocolError):
    pass


class InFlightViolation(ProtocolError):
    pass


class ProtocolCorruption(ProtocolError):
    pass


class ResultTooLarge(ProtocolError, ValueError):
    pass


class TransportError(ProtocolError):
    """An RDMA operation completed with a non-ok status."""

    def __init__(self, event):
        super().__init__(f"RDMA {event.op.kind} failed: {event.status.value}")
        self.event = event


class ValueTooLarge(ValueError):
    pass


class PlacementError(ValueError):
    pass


class RetryExhausted(Exception):
    pass
