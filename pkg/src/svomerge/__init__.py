"""Mixed-autonomy highway-merge simulator and socially-weighted multi-agent DQN."""

__version__ = "0.1.0"
