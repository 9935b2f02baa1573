"""Seeded synthetic worlds with planted ground truth."""
