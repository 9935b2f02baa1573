"""Unit tests for isoalign."""
