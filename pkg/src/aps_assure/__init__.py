"""Assurance pipeline for an ML glucose predictor in closed-loop insulin
delivery: simulation, training, property verification, data audit, and a
goal-structured assurance case."""

__version__ = "0.1.0"
