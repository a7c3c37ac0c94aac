"""Mean-field multi-agent order dispatching on a hexagonal ride-hailing simulator."""

__version__ = "0.1.0"
