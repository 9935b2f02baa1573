"""Evaluation metrics for cross-model and cross-modal transfer."""
