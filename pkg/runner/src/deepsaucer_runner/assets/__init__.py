"""Sample scripts meant to be registered as assets, not imported."""
