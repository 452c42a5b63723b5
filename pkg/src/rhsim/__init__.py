"""Multi-modal transport simulator with ride-hailing rebalancing strategies."""

__version__ = "0.1.0"
