"""Exception types shared across fairkit."""


class FairkitError(Exception):
    """Base class for all fairkit errors."""


class ShapeError(FairkitError, ValueError):
    pass


class ContractError(FairkitError, RuntimeError):
    """A call sequence contract was broken (e.g. a stale forward cache)."""


class NumericError(FairkitError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class DomainError(FairkitError, ValueError):
    pass


class ConfigError(FairkitError, ValueError):
    pass


class MissingGroupError(FairkitError, ValueError):
    pass


class MissingClassError(FairkitError, ValueError):
    pass


class EmptyCellError(FairkitError, ValueError):
    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class DistillationError(FairkitError, RuntimeError):
    def __init__(self, message, agreement):
        super().__init__(f"{message} (agreement {agreement:.3f})")
        self.agreement = agreement


class YieldError(FairkitError, RuntimeError):
    def __init__(self, message, accepted, requested, diagnostics=None):
        super().__init__(f"{message}: accepted {accepted} of {requested}")
        self.accepted = accepted
        self.requested = requested
        self.diagnostics = diagnostics or {}


class MaskError(FairkitError, ValueError):
    pass


class IncomparableReportsError(FairkitError, ValueError):
    pass


class AscentWarning(UserWarning):
    """Latent ascent stopped before reaching the requested confidence."""
