"""Losses, batch sampling, optimizer and the training loop driver."""
