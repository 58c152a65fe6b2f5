"""Spiking-network seizure detection: EEG ingest, sigma-delta encoding, LIF
simulation, surrogate-gradient training, 8-bit hardware mapping and streaming
alarms."""

from .encoding import SpikeRaster, decode, encode
from .errors import SeizureSNNError
from .filters import FilterSpec
from .hwmap import QuantizedConfig, extract_graph, quantize, validate
from .network import Network, WaveSenseConfig, build_network, forward
from .recording import Recording, Trial
from .stream import StreamEngine, alarm_update
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "FilterSpec", "Network", "QuantizedConfig", "Recording", "SeizureSNNError", "SpikeRaster",
    "StreamEngine", "TrainConfig", "Trial", "WaveSenseConfig", "alarm_update", "build_network",
    "decode", "encode", "extract_graph", "forward", "quantize", "train", "validate",
]
