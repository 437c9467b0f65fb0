"""Cascading-refinement video denoiser with uncertainty-gated early exit.

A toy-scale, fully testable numpy implementation: joint iterative
optical-flow refinement and image reconstruction, per-iteration aleatoric
uncertainty, and an exit policy that stops refining once a patch is
confidently restored.
"""

from .config import ModelConfig
from .errors import (DegenerateMatchError, DimensionError, DomainError,
                     NonFiniteError, ParameterError, ParseError,
                     TrainingDivergedError)
from .flow import (CorrelationPyramid, FlowField, GruState, build_corr_pyramid,
                   encode_context, encode_features, gru_update, lookup,
                   refine_flow)
from .gate import (ExitPolicy, GateDecision, compute_savings, decide_exit,
                   eu_loss, total_loss)
from .metrics import pearson, psnr, ssim
from .model import DenoiserModel, init_params
from .patchmatch import (MatchScoreMap, PatchTriplet, assemble_triplets,
                         match_patch, ncc_score)
from .pipeline import EvalReport, bench, denoise_video, emit_heatmap
from .predenoise import predenoise
from .recon import (FrameFeatures, IterationOutput, extract_restoration_features,
                    flow_guided_dcn, fuse, heads, run_cascade, warp_features)
from .synth import (VideoSequence, add_noise, read_frame, read_manifest,
                    synth_sequence, write_frame, write_manifest, write_sequence)
from .tensor import (ParamSet, Tensor, avg_pool2, bilinear_sample, clamp, concat,
                     conv2d, grad_check, identity_grid, matmul, no_grad,
                     pointwise, sqrt, upsample2)
from .train import (DataSpec, TrainConfig, TrainLog, adamw_step,
                    parse_config_file, pretrain_predenoise, sample_sequence,
                    train)

__version__ = "0.1.0"
