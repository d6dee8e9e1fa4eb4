"""Pose inference and synthetic manual generation for stud-connected brick models."""

from .catalog import (
    HU,
    BrickGeometry,
    CatalogError,
    Component,
    CompositionError,
    Pose,
    component_keypoint,
    default_catalog,
    load_catalog,
    rotate_geometry,
    symmetry_decode,
    symmetry_encode,
)
from .camera import CameraParams, project, rasterize, render_manual
from .world import VoxelWorld, removable_visible, studs_of

__all__ = [
    "HU",
    "BrickGeometry",
    "CatalogError",
    "Component",
    "CompositionError",
    "Pose",
    "component_keypoint",
    "default_catalog",
    "load_catalog",
    "rotate_geometry",
    "symmetry_decode",
    "symmetry_encode",
    "CameraParams",
    "project",
    "rasterize",
    "render_manual",
    "VoxelWorld",
    "removable_visible",
    "studs_of",
]

__version__ = "0.1.0"
