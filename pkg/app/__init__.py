"""Hierarchical QP inverse kinematics for RCM-constrained surgical tools."""

__version__ = "1.0.0"
