from .computation import Computation

__all__ = [
    "Computation",
]
