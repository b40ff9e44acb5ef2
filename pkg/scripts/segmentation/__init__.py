"""Command-line entry points for supervoxel segmentation and evaluation."""
