"""Quantised spiking recurrent layers trained with hand-derived BPTT.

Kernel backend: set ``SPIKESEQ_BACKEND=numpy`` to bypass numba.
"""

from spikeseq._backend import BACKEND
from spikeseq.activation import QuantConfig, RangeTracker, quantize, surrogate_grad
from spikeseq.bptt import backward, oracle_backprop
from spikeseq.data import SeqDataset, load_seqf, save_seqf
from spikeseq.gated_layer import GatedParams, gated_forward
from spikeseq.lif_layer import LifParams, lif_forward
from spikeseq.network import ModelSpec, Network
from spikeseq.trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GatedParams",
    "LifParams",
    "ModelSpec",
    "Network",
    "QuantConfig",
    "RangeTracker",
    "SeqDataset",
    "TrainConfig",
    "backward",
    "gated_forward",
    "lif_forward",
    "load_seqf",
    "oracle_backprop",
    "quantize",
    "save_seqf",
    "surrogate_grad",
    "train",
]
