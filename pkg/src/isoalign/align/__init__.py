"""Alignment maps: Procrustes and linear fits, application, composition, persistence."""
