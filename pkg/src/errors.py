"""
src/errors.py

Exception hierarchy for the periodic micromagnetic solver.

Every hard error raised by the library derives from PmfemError so that the
entry point can report the failing stage uniformly. Classes that describe bad
input also derive from ValueError.
"""

from __future__ import annotations

from typing import Optional


class PmfemError(Exception):
    """Base class for all solver errors."""


class MeshFormatError(PmfemError, ValueError):
    """Malformed mesh text file."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DegenerateElementError(PmfemError, ValueError):
    """Tetrahedron with (near) zero volume."""

    def __init__(self, element: int, volume: float) -> None:
        self.element = element
        self.volume = volume
        super().__init__(f"degenerate tetrahedron {element} (volume {volume:.3e})")


class AmbiguousMatchError(PmfemError, ValueError):
    """Two distinct nodes match the same periodic image position."""

    def __init__(self, node: int, candidates: tuple[int, ...]) -> None:
        self.node = node
        self.candidates = candidates
        super().__init__(
            f"ambiguous periodic match for node {node}: candidates {candidates}"
        )


class InconsistentComponentError(PmfemError, ValueError):
    """Members of an LCA component that are not integer-period translates."""


class MaterialError(PmfemError, ValueError):
    """Missing or invalid material parameters."""


class PgfDomainError(PmfemError, ValueError):
    """Green's function evaluated at a singular point."""


class PgfConvergenceError(PmfemError, RuntimeError):
    """Lattice sum failed to reach the requested accuracy."""

    def __init__(self, achieved: float, target: float) -> None:
        self.achieved = achieved
        self.target = target
        super().__init__(
            f"lattice sum reached relative error {achieved:.3e} > target {target:.3e}"
        )


class GridError(PmfemError, ValueError):
    """Invalid BAIM grid or setup request."""


class StaleSetupError(PmfemError, RuntimeError):
    """Setup artifacts built for a different mesh."""


class OracleGuardError(PmfemError, ValueError):
    """Direct O(N^2) oracle requested for too many nodes."""


class StepperError(PmfemError, RuntimeError):
    """Time integration failed."""


class DispersionRootError(PmfemError, ValueError):
    """No root of the dispersion relation inside the searched range."""


class ConfigError(PmfemError, ValueError):
    """Invalid configuration file or value."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
