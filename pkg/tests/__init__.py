"""twinwatch tests."""
