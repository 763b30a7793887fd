"""Deformation-field analysis of longitudinal tumor scans.

Volumes are numpy arrays of shape (nz, ny, nx); displacement fields have
shape (nz, ny, nx, 3) with components (x, y, z) in voxel units.
"""

from ._defield import (
    DefieldError,
    bootstrap_ci,
    classify,
    exp_velocity,
    fisher_exact,
    jacobian_map,
    lcc_similarity,
    metrics,
    partition_regions,
    pooled_t_test,
    radial_gaussian_field,
    region_samples,
    register,
    reproduce_tables,
    warp_mask,
    warp_volume,
)

__all__ = [
    "DefieldError",
    "bootstrap_ci",
    "classify",
    "exp_velocity",
    "fisher_exact",
    "jacobian_map",
    "lcc_similarity",
    "metrics",
    "partition_regions",
    "pooled_t_test",
    "radial_gaussian_field",
    "region_samples",
    "register",
    "reproduce_tables",
    "warp_mask",
    "warp_volume",
]
__version__ = "0.1.0"
