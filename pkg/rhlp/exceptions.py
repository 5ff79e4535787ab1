"""
Exceptions raised by the estimators and their callers.

Management commands map these onto exit codes (see workbench.services).
"""

from typing import Optional


class RhlpError(Exception):
    """Base class for every estimation and input error."""


class InvalidDataset(RhlpError, ValueError):
    """Dataset arrays violate the length / finiteness contract."""


class TooFewPoints(RhlpError, ValueError):
    """Fewer observations than K·(p+2)."""

    def __init__(self, n: int, K: int, p: int):
        self.n = n
        self.K = K
        self.p = p
        super().__init__(
            f"need at least K*(p+2) = {K * (p + 2)} points for K={K}, p={p}; got n={n}"
        )


class DegenerateComponent(RhlpError):
    """A component's responsibility mass collapsed below the floor."""

    def __init__(self, component: int, mass: float):
        self.component = component
        self.mass = mass
        super().__init__(f"component {component} starved (responsibility mass {mass:.3e})")


class AllStartsFailed(RhlpError):
    """Every multi-start run exhausted its restarts."""


class EmptyGrid(RhlpError, ValueError):
    """No (K, p) cell of a selection grid could be fitted."""


class LengthMismatch(RhlpError, ValueError):
    """Two sequences that must be aligned have different lengths."""


class InputFormatError(RhlpError, ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class UnknownScenario(RhlpError, ValueError):
    """Simulation scenario id outside the known set."""
