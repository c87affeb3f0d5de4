"""AQI annotation toolkit for low-cost thermo-hygrometer deployments."""

__version__ = "0.1.0"
