"""Multi-fidelity configuration tuner for multi-query workloads."""

from .space import ConfigSpace, Configuration, KnobSpec, SubSpace

__all__ = ["ConfigSpace", "Configuration", "KnobSpec", "SubSpace"]
__version__ = "0.1.0"
