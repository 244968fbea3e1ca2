"""dhwlearn: model-based reinforcement learning for domestic hot water."""

__version__ = "1.0.0"
