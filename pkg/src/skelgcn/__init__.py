"""Skeleton-based action recognition with adaptive graph convolutions.

The package bundles a small reverse-mode autodiff engine, body-graph
construction and normalization, the adaptive graph convolutional layer
with joint/frame/channel attention, the block-stacked network, a data
pipeline for the four stream modalities, and a training/evaluation/fusion
toolchain behind one CLI.
"""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     ShapeError, SkelGcnError)
from .tensor import (Tensor, activation, backward, batch_norm, constant, conv,
                     cross_entropy, finite_diff_check, matmul, reduce_mean,
                     reduce_sum, relu, sigmoid, softmax)
from .graph import (PartitionedAdjacency, SkeletonTopology, build_topology,
                    hop_distances, normalize_adjacency, partition_neighbors,
                    partitioned_adjacency)
from .agc import (AgclParams, BaselineGcnParams, agcl_forward, baseline_gcn_forward,
                  individual_graph, init_agcl, init_baseline, unfreeze_global_graph)
from .attention import (StcParams, channel_attention, init_stc, spatial_attention,
                        stc_forward, temporal_attention)
from .network import (BlockSpec, ModelConfig, ModelParams, block_forward,
                      count_parameters, default_blocks, init_model, model_forward,
                      named_parameters)
from .data import (Dataset, SkeletonSample, align_axes, augment_random,
                   center_on_spine, derive_bones, derive_motion, pad_frames,
                   parse_samples, select_bodies_by_energy, write_samples)
from .synth import synth_dataset, synth_topology
from .training import (OptimizerState, Schedule, StreamScores, evaluate, fuse_scores,
                       init_optimizer, lr_at_epoch, sgd_step, train)
from .checkpoint import load_checkpoint, save_checkpoint
