"""Decentralized MCTS planning with behavior-cloned teammate models."""

__version__ = "0.1.0"
