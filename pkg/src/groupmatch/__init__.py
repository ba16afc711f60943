"""Group re-identification with multi-attention context graphs, in numpy.

A small reverse-mode autodiff tape drives a paired graph network: each group
of people is a fully connected graph of part features, refined by attention
within the group, across parts and across the paired group, then read out
into a group embedding and matched person-to-person with Sinkhorn.
"""

from .autodiff import EmptySupportError, ShapeError, Tape, Var
from .data import DatasetError, SynthConfig, generate_synthetic, load_dataset, split_probe_gallery, write_dataset
from .evaluation import ModelScorer, cmc, mean_average_precision, run_group_reid, run_person_reid, summarize
from .gradcheck import grad_check
from .graph import GroupView, build_context_graph, pad_pair, pad_to_size
from .matching import exact_assignment, sinkhorn
from .model import (
    ModelConfig,
    ParameterSet,
    forward_pair,
    init_params,
    load_checkpoint,
    save_checkpoint,
    score_group_pair,
    score_person_pairs,
)
from .training import train

__version__ = "0.1.0"
