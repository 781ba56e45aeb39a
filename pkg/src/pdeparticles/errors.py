"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class NonConformingN(EngineError):
    """N admits no uniform grid on this domain (not a perfect n-th power)."""


class QuadratureTooCoarse(EngineError):
    """Quadrature grid violates the nodes-per-mollifier-support condition."""


class EpsilonTooLarge(EngineError):
    """Mollifier scale too large for the domain (torus requires eps < 1/2)."""


class OrderTooHigh(EngineError):
    """Requested derivative order exceeds the mollifier's supported order."""


class DerivativeUnavailable(EngineError):
    """A field was asked for an analytic derivative it does not provide."""


class NotConstantCoefficient(EngineError):
    """Fast constant-coefficient path invoked on a state-dependent model."""


class DimensionMismatch(EngineError):
    """Array shapes inconsistent with the kernel/partition dimensions."""


class BlowUp(EngineError):
    """Particle values exceeded the blow-up guard during integration."""

    def __init__(self, t, max_abs):
        super().__init__(f"state blew up at t={t:.6g} (max |xi| = {max_abs:.3e})")
        self.t = t
        self.max_abs = max_abs


class BeyondShock(EngineError):
    """Burgers characteristics queried at or past the first crossing time."""


class BisectionFailure(EngineError):
    """Characteristic equation root-finding failed to bracket a root."""


class TailTooFat(EngineError):
    """Soliton tails at the torus seam exceed the periodization tolerance."""


class DegenerateData(EngineError):
    """Rate fit requested on errors too small to carry rate information."""


class BoundViolated(EngineError):
    """A theoretical error bound was violated by a measured error."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class ParseError(EngineError):
    """Config file is malformed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownKey(ParseError):
    """Config contains a key the engine does not recognize."""


class RangeError(EngineError):
    """Config value outside its admissible range."""
