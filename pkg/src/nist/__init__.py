"""Screen-space neural silhouette refinement at desk scale.

Subpackages cover the full pipeline: triangle meshes and the smoothing
oracle (mesh), procedural scenes (scenes), the software G-buffer
rasterizer and dataset generator (raster), the autodiff engine
(autodiff), the refinement network (network), losses and the training
loop (training), metrics (evaluation), and the command line (cli).
"""

__version__ = "0.1.0"
