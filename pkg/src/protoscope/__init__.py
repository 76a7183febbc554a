"""Prototype-based evidential image classification with
human-in-the-loop intervention.

The pieces, bottom to top: a small autodiff engine over float64 numpy
arrays (`autodiff`, `special`, `optim`), a convolutional feature
extractor (`backbone`), class-owned prototypes scored by max cosine
similarity (`prototypes`), a Dirichlet evidence head (`evidential`),
the joint trainer with checkpointing (`train`, `checkpoint`),
a synthetic motif corpus (`synthetic`), evaluation statistics
(`metrics`), explanation tooling (`interpret`), decision editing
(`intervene`), an HTTP service (`service`) and the CLI (`cli`).
"""

from .backbone import AugmentConfig, BackboneConfig, ConvBackbone, augment
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import (CheckpointIntegrityError, CheckpointVersionError,
                     ConfigError, ContractViolation, DomainError,
                     ManifestError, NumericFault, StaleSessionError,
                     TrainingDiverged, UndefinedMetricError)
from .evidential import (EvidentialHead, dirichlet_covariance, error_loss,
                         expected_probability, kl_uniform_loss,
                         uncertainty_mass)
from .interpret import (Explanation, bilinear_upscale, compute_representatives,
                        contour_mask, explain, localization_rate,
                        retrieval_accuracy)
from .intervene import global_adjust, local_discard
from .metrics import (auroc, cohen_kappa, diagnostic_odds_ratio, dor_reports,
                      fleiss_kappa, macro_auroc, normalized_entropy,
                      per_class_rates, reject_or_accept)
from .model import ModelConfig, PrototypeNet
from .prototypes import PrototypeBank
from .synthetic import Corpus, SynthSpec, generate_corpus, load_corpus
from .train import TrainConfig, evaluate, paper_hparams, restore_model, train

__version__ = "0.1.0"
