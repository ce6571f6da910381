"""Exception hierarchy shared by all cqverify modules."""

from __future__ import annotations


class CqError(Exception):
    """Base class for every error raised by cqverify."""


class NotHermitian(CqError):
    pass


class EigenFailure(CqError):
    pass


class DimMismatch(CqError):
    pass


class NotPSD(CqError):
    pass


class NotProjection(CqError):
    pass


class UnboundVariable(CqError):
    pass


class DomainOverflow(CqError):
    def __init__(self, var: str, value: int, domain: tuple[int, int] | None = None):
        self.var = var
        self.value = value
        self.domain = domain
        msg = f"value {value} of '{var}' leaves its declared domain"
        if domain is not None:
            msg += f" [{domain[0]}..{domain[1]}]"
        super().__init__(msg)


class DomainTooLarge(CqError):
    pass


class CqSyntaxError(CqError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {msg}" if line else msg)


class DuplicateDecl(CqError):
    pass


class CqTypeError(CqError):
    """Raised when a program or expression fails the type checker."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class MassMismatch(CqError):
    pass


class CapExceeded(CqError):
    pass


class SolverDiverged(CqError):
    pass


class RuleMismatch(CqError):
    pass


class MissingWitness(CqError):
    pass


class NotACoupling(CqError):
    pass


class InequalityFailed(CqError):
    def __init__(self, env, slack: float):
        self.env = env
        self.slack = slack
        super().__init__(f"coupling inequality fails at {env} (slack {slack:.3g})")


class SideOverlap(CqError):
    """The two sides of a relational judgment share a classical or quantum variable."""
