"""
Exception types for the intersection simulator
Every failure the simulator raises on purpose derives from IntersectionError
"""

from typing import Any, Dict, List, Optional, Tuple


class IntersectionError(Exception):
    """Base class for simulator failures"""
    pass


class ContractViolation(IntersectionError, ValueError):
    """Raised when a caller breaks an operation's precondition"""
    pass


class OutOfDomainError(ContractViolation):
    """Raised when a trajectory is queried before its start time"""
    pass


class AssumptionError(IntersectionError):
    """Raised when the control region is shorter than L* and no override is set"""
    pass


class ConfigError(IntersectionError):
    """Raised when a scenario file cannot be parsed or validated"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        location = ""
        if line is not None:
            location = f"line {line}: "
        elif field:
            location = f"{field}: "
        super().__init__(f"{location}{message}")


class InfeasibleMotionError(IntersectionError):
    """MotionSynthesize reported infeasible inside the coordination algorithm"""

    def __init__(self, message: str, dump: Optional[Dict[str, Any]] = None):
        self.dump = dump or {}
        super().__init__(message)


class CollisionError(IntersectionError):
    """Two rigid bodies overlapped at a collision-check instant"""

    def __init__(self, time: float, pairs: List[Tuple[Any, Any]]):
        self.time = time
        self.pairs = pairs
        super().__init__(f"collision at t={time:.6f}s between {pairs}")


class NegativeDelayError(IntersectionError):
    """A vehicle beat free flow, which the dynamics make impossible"""

    def __init__(self, vehicle_id: int, delay: float):
        self.vehicle_id = vehicle_id
        self.delay = delay
        super().__init__(f"vehicle {vehicle_id} has negative delay {delay:.3e}s")
