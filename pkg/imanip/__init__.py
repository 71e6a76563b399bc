# Skill-incremental imitation learning on a voxel tabletop
__version__ = "0.1.0"
