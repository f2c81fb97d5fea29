"""Training the writer-independent network on letter images."""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset

from core.config import ConvSpec, TrainingConfig
from core.exceptions import EmptyDataset, LabelOutOfRange
from core.logger import setup_logger
from convnet.network import NetWeights, WriterIndependentNet
from corpus.emnist import LabeledImages

logger = setup_logger("convnet")


@dataclass
class TrainingHistory:
    """Per-epoch loss and accuracies."""
    epochs: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0


def _tensors(data: LabeledImages, num_classes: int, name: str):
    if len(data) == 0:
        raise EmptyDataset(f"The {name} set is empty")
    labels = np.asarray(data.labels, dtype=np.int64)
    bad = (labels < 0) | (labels >= num_classes)
    if bad.any():
        raise LabelOutOfRange(
            f"{int(bad.sum())} {name} labels outside 0..{num_classes - 1}",
            {"min": int(labels.min()), "max": int(labels.max()), "num_classes": num_classes},
        )
    images = torch.from_numpy(np.asarray(data.images, dtype=np.float32)[:, None])
    return images, torch.from_numpy(labels)


@torch.no_grad()
def accuracy(net: nn.Module, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 512) -> float:
    """Top-1 accuracy in inference mode."""
    was_training = net.training
    net.eval()
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = net(images[start:start + batch_size])
        correct += int((logits.argmax(dim=1) == labels[start:start + batch_size]).sum())
    net.train(was_training)
    return correct / max(len(labels), 1)


def train_emnist(
    train_set: LabeledImages,
    val_set: LabeledImages,
    spec: Optional[ConvSpec] = None,
    training: Optional[TrainingConfig] = None,
    seed: int = 0,
    dataset_digest: str = "",
    config_digest: str = "",
) -> "tuple[NetWeights, TrainingHistory]":
    """Train with Adam and step decay; return the epoch with the best validation accuracy."""
    spec = spec or ConvSpec()
    training = training or TrainingConfig()
    train_x, train_y = _tensors(train_set, spec.num_classes, "training")
    val_x, val_y = _tensors(val_set, spec.num_classes, "validation")

    torch.manual_seed(seed)
    net = WriterIndependentNet(spec)
    optimizer = torch.optim.Adam(
        net.parameters(),
        lr=training.learning_rate,
        betas=tuple(training.betas),
        eps=training.adam_eps,
    )
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=training.lr_step_epochs, gamma=training.lr_decay
    )
    criterion = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(seed)
    loader = DataLoader(
        TensorDataset(train_x, train_y),
        batch_size=training.batch_size,
        shuffle=True,
        generator=generator,
    )

    history = TrainingHistory()
    best_state = copy.deepcopy(net.state_dict())
    logger.info(f"🚀 Training on {len(train_y)} samples, validating on {len(val_y)} for {training.epochs} epochs")

    for epoch in range(1, training.epochs + 1):
        net.train()
        total_loss = 0.0
        seen = 0
        for images, labels in loader:
            optimizer.zero_grad()
            loss = criterion(net(images), labels)
            loss.backward()
            optimizer.step()
            total_loss += float(loss) * len(labels)
            seen += len(labels)
        lr = optimizer.param_groups[0]["lr"]
        scheduler.step()

        val_acc = accuracy(net, val_x, val_y)
        record = {"epoch": epoch, "loss": total_loss / max(seen, 1), "val_accuracy": val_acc, "lr": lr}
        history.epochs.append(record)
        logger.info(f"Epoch {epoch}/{training.epochs}: loss {record['loss']:.4f}, val acc {val_acc:.4f}, lr {lr:.2e}")

        if epoch == 1 or val_acc > history.best_val_accuracy:
            history.best_epoch = epoch
            history.best_val_accuracy = val_acc
            best_state = copy.deepcopy(net.state_dict())

    net.load_state_dict(best_state)
    net.eval()
    logger.info(f"✅ Best epoch {history.best_epoch} with val acc {history.best_val_accuracy:.4f}")
    weights = NetWeights.from_network(
        net,
        seed=seed,
        epoch=history.best_epoch,
        dataset_digest=dataset_digest,
        config_digest=config_digest,
        val_accuracy=history.best_val_accuracy,
        invert_ink=training.invert_ink,
    )
    return weights, history
