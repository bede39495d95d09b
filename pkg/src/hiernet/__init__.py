"""Hierarchical concept recognition and learning in layered threshold networks."""
