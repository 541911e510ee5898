"""Behavior-clustering inverse reinforcement learning on tabular MDPs."""
