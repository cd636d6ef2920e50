"""Exception types shared across the package."""


class FraclapError(Exception):
    """Base class for all package errors."""


class DegenerateElement(FraclapError):
    """Simplex too close to degenerate for a stable reference map."""


class ParseError(FraclapError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MeshError(FraclapError):
    """Mesh violates conformity or connectivity assumptions."""


class ResourceLimit(FraclapError):
    """Requested refinement level exceeds the configured guard."""


class InvalidOrder(FraclapError):
    """Quadrature order outside the supported range."""


class InvalidParameter(FraclapError):
    """Parameter outside its mathematical domain."""


class IntegrandError(FraclapError):
    """Integrand produced NaN or a vanishing denominator; carries the node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class AlignmentError(FraclapError):
    """Canonically aligned inputs disagree on the shared simplex."""


class WrongCase(FraclapError):
    """Element pair does not match the requested singularity class."""


class ExponentMismatch(FraclapError):
    """Scaling-exponent audit disagrees with the stored table."""

    def __init__(self, kind, audit, table):
        super().__init__(
            f"{kind}: audit exponents {audit} != table exponents {table}"
        )
        self.kind = kind
        self.audit = audit
        self.table = table


class SolverError(FraclapError):
    """Linear system is not symmetric positive definite."""


class ConsistencyError(FraclapError):
    """Discrete energy exceeds the continuous one beyond round-off.

    Signals that the quadrature orders were too low for the mesh.
    """


class OutOfDomain(FraclapError):
    """Evaluation point lies outside the mesh."""


class OracleUnstable(FraclapError):
    """Reference computation did not behave as required (reported, not fixed)."""
