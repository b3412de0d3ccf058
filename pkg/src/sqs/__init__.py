"""Joint pruning and quantization of MLP weights by variational learning
over a spike-and-GMM family, with a bit-exact compressed file format."""

from .codebook import GmmCodebook, WindowPartition, kmeans_init, partition_windows
from .estimators import DenseMLP, SQSCompressor
from .inference import CompressedModel, PosteriorSnapshot, finalize, snapshot
from .network import Network, ParamLayout, flatten
from .objective import ObjectiveBreakdown, VariationalModel, objective
from .trainer import CompressResult, TrainConfig, compress, train_dense

__all__ = [
    "GmmCodebook",
    "WindowPartition",
    "kmeans_init",
    "partition_windows",
    "DenseMLP",
    "SQSCompressor",
    "CompressedModel",
    "PosteriorSnapshot",
    "finalize",
    "snapshot",
    "Network",
    "ParamLayout",
    "flatten",
    "ObjectiveBreakdown",
    "VariationalModel",
    "objective",
    "CompressResult",
    "TrainConfig",
    "compress",
    "train_dense",
]

__version__ = "0.1.0"
