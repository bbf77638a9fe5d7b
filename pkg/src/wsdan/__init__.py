"""Weakly supervised attention learning with attention-guided augmentation
for fine-grained image classification."""
from ._validation import ConfigError, ContractError
from .attention import AttentionGenerator, bilinear_attention_pooling, generate_attention_maps
from .augment import (attention_crop, attention_drop, bounding_box_of_mask, crop_mask, drop_mask,
                      normalize_attention_map, random_crop_baseline, random_drop_baseline,
                      select_augmentation_map, upsample_map)
from .boxes import BoundingBox
from .config import TrainConfig
from .estimator import WSDANClassifier
from .evaluation import iou, localization_error, mean_iou, run_ablation, top1_accuracy
from .inference import (Prediction, coarse_to_fine_predict, combine_probabilities, object_bbox,
                        object_map)
from .model import WSDAN, ConvBackbone, ModelOutput, training_loss
from .regularization import FeatureCenters, attention_regularization_loss, update_centers
from .trainer import lr_schedule, train, train_step

__version__ = "0.1.0"
