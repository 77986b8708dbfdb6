"""Cameras, the evaluation protocol, metrics and the command line."""
