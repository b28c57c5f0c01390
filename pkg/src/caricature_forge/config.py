"""Tunable defaults shared across the engine.

Values here are engineering choices (resolutions, weights, radii); operations
take them as keyword arguments so callers can override per session.
"""

# Exaggeration field bounds (dimensionless scale on vertex Laplacians).
LAMBDA_MIN = 0.2
LAMBDA_MAX = 5.0

# Anchor (backfacing positional constraint) penalty weight.
ANCHOR_WEIGHT = 1.0

# Handle (screen-space curve constraint) penalty weight for sketch matching.
HANDLE_WEIGHT = 1000.0

# Weak all-vertex position prior damping handle-solve overshoot.
POSITION_PRIOR = 0.01

# Arc-length stations per feature curve for sketch correspondence.
CURVE_STATIONS = 64

# Snap radius for erase-and-redraw gap closing, in px at 1080p image height.
SNAP_RADIUS = 12.0
SNAP_REFERENCE_HEIGHT = 1080

# Parametric chart raster resolution (R x R) and sketch ribbon width in px.
CHART_RESOLUTION = 256
RIBBON_WIDTH = 5

# Synthetic exaggeration generator.
SMOOTHING_ITERS = 10
SYNTH_SCALE_RANGE = (0.5, 2.5)

# Sketch-to-lambda estimator.
ESTIMATOR_DAMPING = 1e-2
ESTIMATOR_MAX_ITERS = 20

# Background warp grid.
WARP_CELL_SIZE = 24

# Seam / compositing.
SEAM_BAND_WIDTH = 16
POISSON_TOL = 1e-4
POISSON_MAX_ITERS = 10000

# Reshading.
ALPHA_BOUNDS = (0.3, 3.0)
ALPHA_DOWNSAMPLE = 4
SHADING_EPS = 1e-3
LIGHT_ALTERNATIONS = 10
LIGHT_MIN_REGION = 100

# Detail enhancement patches.
PATCH_SIZE = 256
PATCH_STRIDE = 192
RESIDUAL_MEAN_BOUND = 0.02
BASELINE_GAIN = 0.8
