"""Forward event-chain Monte Carlo samplers and diagnostics."""

__version__ = "0.1.0"
