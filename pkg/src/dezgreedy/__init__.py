"""Directed EZ-greedy exploration with GVF sub-policies, plus baselines, on gridworlds."""

__version__ = "0.1.0"
