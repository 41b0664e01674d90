"""Neural point clouds: spherical-harmonics radiance, PLY storage and fitting."""
