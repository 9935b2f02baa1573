"""Numerical checks of the identifiability results and error bounds."""
