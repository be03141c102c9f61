"""Scenario configuration, the continuous-validation loop and report emission."""
