"""Scenario runners and run reports."""
