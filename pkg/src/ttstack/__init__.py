"""Two-tier stacking of small vision transformers for binary grayscale classification."""
from .data import (Dataset, GrayImage, LabeledSample, PipelineConfig, augment, balance_by_upsampling,
                   load_dataset, make_batches, normalize, resize, stratified_split)
from .meta import (MetaFeatures, MetaLearner, compute_class_weights, extract_logits, fit_logreg,
                   fit_meta_learner, fit_standardizer, stack_predict)
from .metrics import (ConfusionMatrix, MetricsReport, accuracy, classification_report, confusion_matrix,
                      f1, precision, recall, roc_auc, roc_curve)
from .trainer import TrainConfig, TrainHistory, adamw_step, evaluate_loss_accuracy, train
from .vit import TinyViTModel, ViTConfig, backward, cross_entropy, forward, init_model, predict, softmax

__version__ = "0.1.0"
