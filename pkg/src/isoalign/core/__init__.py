"""Core package of isoalign: shared models, errors, settings and console."""
