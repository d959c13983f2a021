"""Test fixtures for the HQP surgical IK toolkit."""
