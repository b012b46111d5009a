"""flowalign: planar image alignment via flow-matched displacement fields.

A dense displacement field, initialized at zero, is transported to the
registered field by Euler-integrating a learned conditional velocity net;
the homography is recovered from the field by least squares. A
gradient-reversal domain discriminator makes the feature encoder robust to
photometric domain shifts. Everything runs on a small, self-contained
numpy autodiff engine.
"""

from .datagen import GenConfig, PairSample, make_dataset, read_dataset, write_dataset
from .flow import FlowState, SolverConfig, euler_solve, flow_matching_loss, interpolate_state, target_velocity
from .geometry import (Homography, apply_homography, average_corner_error,
                       displacement_from_homography, dlt_from_correspondences,
                       fit_homography_from_displacement, four_point_to_homography,
                       image_corners, warp_image)
from .metrics import MetricsReport, auc_at_threshold, compute_report
from .model import (DomainDiscriminatorConfig, EncoderConfig, ModelConfig,
                    VelocityHeadConfig, forward_align, init_params,
                    load_checkpoint, save_checkpoint)
from .optim import Adam, AdamState, adam_update, clip_global_norm
from .tensor import (DomainError, FormatError, NumericError, ShapeError, Tensor,
                     bilinear_sample, concat, conv2d, grad_reverse, l2_norm,
                     matmul, no_grad, relu, sigmoid)
from .train import TrainConfig, ablation_run, domain_probe, evaluate, total_loss, train_run

__version__ = "0.1.0"
