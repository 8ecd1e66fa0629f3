"""Graph-based local feature alignment for point cloud domain adaptation, at desk scale."""
__version__ = "0.1.0"
