"""Proxy-map cell segmentation and tracking pipeline.

The package implements the non-neural half of a distance-map based
segmentation and tracking method: training-target proxy generation, instance
extraction from (possibly noisy) proxy maps, displacement-based linking,
whole-video lineage-driven segmentation correction, an evaluation metric that
separates segmentation from tracking errors, and a synthetic video oracle for
end-to-end validation.
"""

__version__ = "0.1.0"
