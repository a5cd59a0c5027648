"""Laboratory for a constant-space self-stabilizing BFS spanning-tree protocol."""

__version__ = "0.1.0"
