"""Test package for prunestack."""
