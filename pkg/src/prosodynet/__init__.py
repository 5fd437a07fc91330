"""Word-level prosodic event detection and classification.

A small, dependency-light pipeline: acoustic feature extraction (prosody
and Mel sets), word-window assembly with optional context and position
indicator, a from-scratch CNN trained with Adam, cross-validated
experiment harnesses, and a deterministic synthetic corpus generator.
"""

__version__ = "0.1.0"

from .audio import AudioBuffer, read_wav, write_wav
from .corpus import (EXCLUDED, DatasetEntry, EventLabel, LabelScheme, WordToken,
                     build_dataset, make_scheme, map_label, parse_alignments,
                     parse_labels, zscore_per_speaker)
from .features import (FeatureTrack, FrameSpec, estimate_f0, extract_features,
                       frame_count, mel_features, prosody_features)
from .harness import (CVPlan, Fold, Metrics, RunConfig, evaluate, make_kfold,
                      make_loso, majority_baseline, run_experiment, train_model)
from .net import (AdamState, ConvLayerParams, ForwardTrace, ModelParams,
                  adam_step, conv_output_length, conv2d_forward, cross_entropy,
                  init_params, load_checkpoint, maxpool_adaptive, model_backward,
                  model_forward, save_checkpoint)
from .synth import SynthCorpus, SynthSpec, generate_corpus, write_corpus
from .windows import InputWindow, WindowConfig, assemble_batch, assemble_window, \
    scan_max_frames
