"""Digital twin of a spastic knee coupled to a torque-controlled exoskeleton."""

__version__ = "0.1.0"
