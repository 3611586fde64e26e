"""Uniform classification: losses, accuracies and threshold theory."""
