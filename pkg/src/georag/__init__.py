"""Retrieval-augmented image geolocalization engine."""

from .coordparse import ParseOutcome, parse_coordinates
from .geodesy import AccuracyLevel, GeoCoord, bucket, geodesic, geodesic_km
from .vecstore import (
    GalleryRecord,
    Index,
    IndexConfig,
    IndexMode,
    Neighbor,
    build_index,
    l2_distance,
    load_index,
    save_index,
)

__version__ = "0.1.0"
