"""Integration tests for isoalign."""
