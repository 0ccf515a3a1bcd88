"""Multi-source domain adaptation with perplexity-weighted source classifiers."""

from .data import (BatchTuple, DomainDataset, ShiftSpec, apply_category_shift, category_split,
                   gen_synthetic_domains, load_csv_dataset, make_batches, save_csv_dataset)
from .harness import (ExperimentConfig, ExperimentReport, compute_metrics, emit_report,
                      load_config, run_experiment)
from .model import (DctnModel, PerplexityScores, TargetPrediction, combine_confidence, source_weights,
                    concentration_constants, discriminate, extract, perplexity_score,
                    predict_target, target_confidence)
from .nn import Dense, Mlp, Param, losses, sgd_step
from .training import (PseudoLabelSet, TrainConfig, TrainTrace, discriminative_update, pretrain,
                       pseudo_label, select_hard_source, source_target_losses, train, update_discriminator,
                       update_extractor)

__version__ = "0.1.0"
