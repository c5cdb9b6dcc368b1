"""
Exception hierarchy shared by every compile stage
"""
from typing import Optional


class CgraError(Exception):
    """Base class for all toolkit failures"""

    stage: str = "compile"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ArchError(CgraError):
    """Architecture description is malformed"""

    stage = "arch"

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid architecture: " + "; ".join(self.violations))


class DelayLibraryError(CgraError):
    """Delay library cannot be parsed or does not cover the architecture"""

    stage = "arch"

    def __init__(self, message: str, line: Optional[int] = None, missing: Optional[list[str]] = None):
        self.line = line
        self.missing = list(missing or [])
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AppParseError(CgraError):
    """Application file is malformed or violates a structural invariant"""

    stage = "parse"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphCycleError(CgraError):
    """A dense graph contains a cycle"""

    stage = "parse"

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class CapacityError(CgraError):
    """Not enough kind-compatible tiles for the application"""

    stage = "place"

    def __init__(self, deficit: dict[str, int]):
        self.deficit = dict(deficit)
        detail = ", ".join(f"{kind}: short by {n}" for kind, n in sorted(self.deficit.items()))
        super().__init__(f"insufficient tiles ({detail})")


class PlacementError(CgraError):
    """A net endpoint has no location"""

    stage = "place"


class UnroutableError(CgraError):
    """Negotiated congestion did not converge"""

    stage = "route"

    def __init__(self, nets: list[str], reason: str = "resource exhaustion"):
        self.nets = sorted(nets)
        super().__init__(f"unroutable ({reason}): " + ", ".join(self.nets))


class TimingError(CgraError):
    """Timing graph cannot be analyzed"""

    stage = "sta"


class ScheduleError(CgraError):
    """Memory schedule update produced a negative offset"""

    stage = "schedule"


class DuplicationError(CgraError):
    """Requested duplication does not fit the array"""

    stage = "emit"


class SimulationError(CgraError):
    """Simulation could not complete"""

    stage = "sim"


class VerificationError(CgraError):
    """Simulated outputs of two designs disagree"""

    stage = "verify"


INPUT_ERRORS = (ArchError, DelayLibraryError, AppParseError)
