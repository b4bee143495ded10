"""Graph sequence learning with a bidirectional selective state-space
encoder over random-walk neighborhood tokens."""

from .autodiff import Tensor, no_grad
from .config import TrainConfig
from .errors import GmnError, GraphIOError, NumericalError, ValidationError
from .graphs import (Graph, NodeOrdering, WLColoring, degree_ordering,
                     induce_subgraph, k_hop_neighborhood, load_dataset,
                     load_graph, make_graph, node_ordering, ppr_ordering,
                     wl_refine)
from .model import GMNModel, bimamba, build_model, gmn_forward, load_checkpoint, mamba_block, readout, save_checkpoint
from .posenc import PosEncoding, concat_pe, lappe, rwse
from .ssm import SSMDiscretization, SSMParams, discretize, kernel_conv, scan_recurrent, selective_projection
from .tokenizer import (TokenSequenceSpec, WalkSample, build_token_sets,
                        node_token_mode, order_tokens, sample_walks,
                        tokenize_graph)
from .training import adam_step, finite_diff_check, train

__version__ = "0.1.0"

__all__ = [
    "Graph", "GMNModel", "NodeOrdering", "PosEncoding", "SSMDiscretization",
    "SSMParams", "Tensor", "TokenSequenceSpec", "TrainConfig", "WLColoring",
    "WalkSample", "GmnError", "GraphIOError", "NumericalError",
    "ValidationError", "adam_step", "bimamba", "build_model",
    "build_token_sets", "concat_pe", "degree_ordering", "discretize",
    "finite_diff_check", "gmn_forward", "induce_subgraph", "kernel_conv",
    "k_hop_neighborhood", "lappe", "load_checkpoint", "load_dataset",
    "load_graph", "make_graph", "mamba_block", "no_grad", "node_ordering",
    "node_token_mode", "order_tokens", "ppr_ordering", "readout", "rwse",
    "sample_walks", "save_checkpoint", "scan_recurrent",
    "selective_projection", "tokenize_graph", "train", "wl_refine",
]
