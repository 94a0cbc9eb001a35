"""Signal/noise band decomposition and biometric evaluation of eye movements."""

__version__ = "0.1.0"
