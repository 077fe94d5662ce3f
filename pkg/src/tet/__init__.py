"""Line segment tracking by following the two endpoints with pyramidal Lucas-Kanade."""

__version__ = "0.1.0"

from .geometry import Correspondence, Endpoint, LineSegment, MovementVector, length, scale_to_level
from .image import (BoundaryError, GrayImage, ImagePyramid, build_pyramid, gradient_at, load_gray,
                    pyr_down, sample_bilinear)
from .tracker import (EndpointTrackState, Status, TrackerConfig, TrackResult,
                      spatial_gradient_matrix, track_endpoint_at_level, track_line, track_lines)

__all__ = [
    "BoundaryError", "Correspondence", "Endpoint", "EndpointTrackState", "GrayImage",
    "ImagePyramid", "LineSegment", "MovementVector", "Status", "TrackResult", "TrackerConfig",
    "build_pyramid", "gradient_at", "length", "load_gray", "pyr_down", "sample_bilinear",
    "scale_to_level", "spatial_gradient_matrix", "track_endpoint_at_level", "track_line",
    "track_lines",
]
