"""Decentralized swarm policies trained with multi-agent PPO over an agent-entity attention graph."""

__version__ = "0.1.0"
