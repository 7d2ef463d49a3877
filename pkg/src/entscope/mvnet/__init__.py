"""Multi-view classifier: network, losses, optimizer, training, checkpoints."""

from .losses import (Batch, LossConfig, LossValue, TripletBatch, backward, contrastive_loss,
                     cosine_similarity, cross_entropy, loss_and_grad, mine_triplets, softmax,
                     total_loss)
from .network import ModelParams, dropout_mask, forward, forward_batch, init_model
from .optim import AdamState, PlateauScheduler, adam_step, clip_gradients, global_norm
from .training import (HISTORY_COLUMNS, Metrics, TrainConfig, TrainingDiverged, TrainResult,
                       evaluate, history_table, predict_proba, train)
from .checkpoint import (CheckpointError, ClassTableMismatch, load_checkpoint, read_checkpoint,
                         save_checkpoint)
