"""Hierarchical maneuver planning with hybrid-MDP prediction and chance-constrained MPC."""

__version__ = "0.1.0"
