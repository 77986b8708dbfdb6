"""Animatable Gaussian-splat vehicles: part refinement, kinematics, articulation."""

__version__ = "0.1.0"
