"""Uncertainty-weighted adversarial attacks on semantic segmentation,
desk scale: a from-scratch autodiff core, a tiny fully-convolutional
model, deterministic synthetic data, and an evaluation harness.
"""

from .attacks import (AttackConfig, AttackResult, ConfigError, PGD_PRESETS,
                      fgsm, ifgsm, kurakin_iterations, pgd, run_attack,
                      subset_ifgsm, weighted_loss)
from .autodiff import (DomainError, ShapeError, Tape, Tensor, bias_add,
                       conv2d, cross_entropy, gradient_check, softmax,
                       stop_gradient)
from .data import (DatasetSpec, LabeledImage, ShapesDataset, generate,
                   load_manifest, load_split, save_dataset)
from .harness import (EvalReport, bench, evaluate_clean,
                      load_experiment_inputs, measure_comparison,
                      run_experiment)
from .metrics import apsr, confusion_matrix, delta_miou, miou
from .model import (ModelConfig, SegModel, load_checkpoint, predict,
                    save_checkpoint, train)
from .prng import SplitMix64, derive_seed
from .uncertainty import (UncertaintyMap, boundary_distance, entropy, margin,
                          max_min_diff, mean_margin, weight_map)

__version__ = "0.1.0"
