"""calibforge: RGBD simulation, hand-eye calibration, and automatic labeling.

The package synthesizes RGBD acquisitions of an electrode-covered head
phantom mounted on a robot, solves the robot/camera hand-eye calibration from
pose pairs, propagates a single frame's electrode annotations to every frame
through the calibrated transform chain, exports 2D/3D label datasets, and
checks that the labels are learnable with a small from-scratch regressor.
"""

__version__ = "0.1.0"

from .geometry import NoiseParams, RigidTransform, Rotation

__all__ = ["NoiseParams", "RigidTransform", "Rotation", "__version__"]
