"""
T3DNet: tiny point-cloud classifiers via network augmentation and distillation.
"""

__version__ = "1.0.0"
