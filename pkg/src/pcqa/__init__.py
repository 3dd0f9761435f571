"""Full-reference point cloud quality assessment.

Five scores compare a distorted colored point cloud with its reference
(point-to-point, point-to-plane, local lightness spread, graph lightness
variation, point count); an RBF support vector regressor fuses them into one
quality prediction.
"""
from ._accel import backend, set_backend
from .evaluation import EvalReport, evaluate, fit_logistic4, pearson, plcc, srocc
from .metrics import (
    FeatureVector,
    MetricConfig,
    compute_features,
    score_graph_variation,
    score_lightness_variance,
    score_p2plane,
    score_p2point,
    score_point_count,
)
from .normals import estimate_normals
from .ply import PlyError, load_ply, save_ply
from .pointcloud import PointCloud, compute_lightness
from .spatial import NeighborList, SpatialIndex, build_index, knn, nearest, sample_correspondence
from .svr import SvrHyperparams, SvrModel, load_model, save_model, standardize_fit, train

__version__ = "0.1.0"
