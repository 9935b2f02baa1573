"""Embedding and map persistence: EMB1/MAP1 binary files with JSON sidecars."""
