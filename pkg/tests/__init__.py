"""splitloc test suite."""
