"""Graph-based conversational recommendation with a single DQN policy over asks and recommendations."""

__version__ = "0.1.0"
