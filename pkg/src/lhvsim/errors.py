"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input failed validation (non-unit vector, malformed config, ...)."""


class DomainError(ValueError):
    """A parameter lies outside the domain an operation is defined on."""


class InternalConsistencyError(RuntimeError):
    """A mathematical identity that must hold was violated at runtime."""


class ProtocolViolationError(RuntimeError):
    """A party sent a message the wire protocol does not allow."""


class TransportError(RuntimeError):
    """A networked run lost its connection or got a malformed frame."""
