"""SLO-aware federated learning simulator driven by Active Inference agents."""

__version__ = "0.1.0"
