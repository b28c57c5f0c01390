"""caricature-forge: sketch-driven face exaggeration and photorealistic
re-rendering.

Pipeline: edit projected feature curves -> per-vertex exaggeration field ->
scaled-Laplacian mesh reconstruction -> textured re-render + background warp
-> seam-cut compositing -> detail enhancement -> shading-ratio relighting.
"""

from ._kernels import BACKEND as kernel_backend
from .mesh import (
    FaceMesh,
    LambdaField,
    LaplacianSet,
    SolverContext,
    compute_laplacians,
    deformation_transfer,
    exaggerate,
    load_mesh,
    prefactor,
    save_mesh,
    vertex_normals,
)
from .sketch import (
    Camera,
    DisplacementSet,
    SketchEdit,
    SketchSet,
    apply_edit,
    correspondence_displacements,
    match_sketch,
    project_curves,
)

__version__ = "0.1.0"

__all__ = [
    "kernel_backend",
    "FaceMesh",
    "LambdaField",
    "LaplacianSet",
    "SolverContext",
    "compute_laplacians",
    "deformation_transfer",
    "exaggerate",
    "load_mesh",
    "prefactor",
    "save_mesh",
    "vertex_normals",
    "Camera",
    "DisplacementSet",
    "SketchEdit",
    "SketchSet",
    "apply_edit",
    "correspondence_displacements",
    "match_sketch",
    "project_curves",
    "__version__",
]
