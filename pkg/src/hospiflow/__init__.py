"""Hospital patient-flow simulation, surrogate-based parameter fitting and sensitivity analysis."""

__version__ = "0.1.0"
