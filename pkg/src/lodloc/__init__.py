"""lodloc: 6-DoF aerial camera localization against LoD city wireframes.

Given a coarse sensor pose, a lightweight Level-of-Detail city mesh, and a
pyramid of wireframe-probability maps, the pipeline culls the mesh wireframe
for visibility, scores hierarchical 4-DoF pose-hypothesis grids by projected
wireframe alignment, shrinks the search ranges from the pose-distribution
uncertainty, and finishes with a 6-DoF Gauss-Newton refinement.
"""

from .camera import EulerPose, Intrinsics, PoseSE3, euler_to_pose, pose_to_euler, project, so3_exp
from .errors import LodlocError, NumericalError, ParseError, ValidationError
from .geometry import Mesh, WireframeEdge, WireframePoints, extract_wireframe, sample_points, subsample_points
from .oracle import NoiseSpec, ProbabilityMap, ProbabilityMapPyramid, bilinear_lookup, synth_pyramid
from .pipeline import LocalizationRecord, localize
from .refine import RefineConfig, gauss_newton_refine
from .visibility import DepthMap, render_depth, visibility_mask, visible_points
from .volume import PoseVolume, SamplingSpec, build_cost_volume, build_grid, next_range, pose_variance, select_pose, softmax_volume
from .evaluate import PoseError, RecallReport, pose_error, recall

__version__ = "0.1.0"
