"""Recover the evolving beliefs of an online-learning decision maker from logged
(context, action, outcome) trajectories."""

__version__ = "0.1.0"
