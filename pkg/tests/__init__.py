"""Test suite for isoalign."""
