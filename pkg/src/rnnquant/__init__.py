"""Fixed-point word-length optimization for LSTM recurrent networks.

Train small LSTM networks, quantize their weights to L2-optimal uniform
grids and their signals to bounded codebooks, recover accuracy with
retrain-based quantization-aware training, and measure per-layer
bit-width sensitivity and storage-capacity savings.
"""

__version__ = "0.1.0"

from .capacity import (
    capacity_ratio,
    count_group_weights,
    group_labels,
    lstm_layer_weight_count,
    total_weight_count,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash, emit_config, load_config, parse_config
from .data import (
    CharCorpus,
    FrameDataset,
    load_char_corpus,
    load_frame_dataset,
    normalize_features,
    one_hot,
    save_frame_dataset,
    stream_batcher,
    synth_frame_task,
)
from .estimators import LstmFrameClassifier, LstmLanguageModel
from .network import (
    ForwardCache,
    LstmLayerParams,
    LstmState,
    NetworkParams,
    Topology,
    backward,
    bptt_backward,
    enumerate_groups,
    forward,
    lstm_step,
    quantize_params,
)
from .numerics import activation, activation_derivative, matmul, seeded_rng
from .optim import AdadeltaMomentum, adadelta_update
from .quantizers import (
    QuantizationOutcome,
    SignalQuantSpec,
    SignalQuantizer,
    UniformWeightQuantizer,
    WeightQuantSpec,
    bits_to_levels,
    optimize_step_size,
    quantization_error,
    quantize_signal,
    quantize_weight,
    signal_codebook,
)
from .sensitivity import (
    SensitivityReport,
    SweepEntry,
    emit_report,
    full_signal_sweep,
    full_weight_sweep,
    parse_report,
    signal_layer_sweep,
    weight_group_sweep,
)
from .training import (
    DualWeights,
    TrainConfig,
    TrainResult,
    direct_quantize,
    evaluate_bpc,
    evaluate_fer,
    lr_and_stopping,
    retrain_step,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
