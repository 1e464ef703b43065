"""Pose transfer between meshes via learned optimal-transport correspondence and ElaIN refinement."""

from .correspondence import correlation, extract_features, sinkhorn, warp
from .dataset import build_mesh, sample_pairs
from .mesh import Mesh, center_mesh, load_obj, save_obj, shuffle_vertices, vertex_neighbors
from .metrics import chamfer, edge_loss, emd, pmd, rec_loss, total_loss
from .model import ModelConfig, PoseTransferNet
from .training import TrainConfig, evaluate, train, transfer

__version__ = "0.1.0"
