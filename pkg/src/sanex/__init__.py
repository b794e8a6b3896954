"""State-aware noisy exploration for DQNs at desk scale."""

__version__ = "0.1.0"
