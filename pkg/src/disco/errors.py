"""Exception types shared across the package."""


class DiscoError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(DiscoError):
    pass


class BehindCamera(DiscoError):
    pass


class ZeroProjection(DiscoError):
    pass


class InvalidCrop(DiscoError):
    pass


class SamplingExhausted(DiscoError):
    pass


class FormatError(DiscoError):
    pass


class ShapeError(DiscoError, ValueError):
    pass


class InsufficientBatch(DiscoError):
    pass


class NonFiniteGradient(DiscoError):
    pass


class ConfigError(DiscoError, ValueError):
    pass


class EmptyEvaluation(DiscoError):
    pass


class UnderConstrained(DiscoError):
    pass


class NoConvergence(DiscoError):
    pass
