"""Two-modality co-learning with disentangled shared, specific, and unused features.

Training consumes paired samples from two sensor modalities; inference needs
only one of them. Four objectives shape the per-modality latent triples: the
per-modality predictive loss, an auxiliary predictive loss over shared and
specific features, a cross-modal InfoNCE term aligning shared features, and a
cooperative modality-discriminant term structuring specific and unused
features.
"""

from .data import (ConfigurationError, Dataset, DatasetFormatError, GeneratorSpec,
                   ModalityConfig, Normalizer, Sample, TaskSpec, compute_class_weights,
                   fit_normalizer, generate_synthetic, kfold_split, load_dataset,
                   normalize_target, planted_latents, save_dataset)
from .encoders import EncoderSpec, FeatureTriple, ParamBundle, build_encoder, init_parameters
from .losses import (ContrastiveConfig, LossBundle, aux_loss, contrastive_loss,
                     cosine_similarity, info_nce, kendall_total, main_loss, modality_loss,
                     predictive_loss, total_loss)
from .model import (CheckpointError, CoLearnModel, LossAssembly, TrainConfig, TrainHistory,
                    TrainingDivergedError, forward_train, load_model, predict_from_space,
                    predict_single, save_model, train)
from .baselines import IndividualModel, VariantSpec, build_variant, run_ablation_suite
from .evaluation import (MetricReport, RunReport, export_embeddings, f1_score, gradcheck,
                         logits_to_predictions, r2_score, run_cv)
from .seeding import derive_seed

__version__ = "0.1.0"
