"""Joint segmentation/classification network, its configuration and checkpoints."""
