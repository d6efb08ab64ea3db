"""Stage-1 teacher: identity cross-entropy on ground-truth crops, optionally plus batch-hard triplet."""

import logging
from collections import defaultdict
from pathlib import Path
from typing import List, Optional, Union

import torch
import torch.nn.functional as F
from torch import Tensor

from datamodel.records import DatasetManifest
from models.crops import collect_identity_crops
from models.reid_teacher import ReIDTeacher
from training.config import TeacherConfig

logger = logging.getLogger(__name__)


class TeacherTrainingError(RuntimeError):
    """Raised when the teacher cannot be trained on the given data."""
    pass


def batch_hard_triplet(features: Tensor, labels: Tensor, margin: float) -> Tensor:
    """Hardest positive and hardest negative per anchor, hinge at `margin`."""
    dist = torch.cdist(features, features)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    hardest_pos = (dist * same.to(dist.dtype)).max(dim=1).values
    hardest_neg = dist.masked_fill(same, float("inf")).min(dim=1).values
    valid = torch.isfinite(hardest_neg)
    if not bool(valid.any()):
        return features.sum() * 0.0
    return F.relu(hardest_pos[valid] - hardest_neg[valid] + margin).mean()


def pretrain_teacher(
    train_manifest: DatasetManifest,
    image_root: Union[str, Path],
    config: Optional[TeacherConfig] = None,
    epochs: Optional[int] = None,
    history: Optional[List[dict]] = None,
) -> ReIDTeacher:
    """Train a crop re-ID model on the training identities and return it frozen."""
    config = config or TeacherConfig()
    epochs = config.epochs if epochs is None else epochs
    if train_manifest.num_identities < 2:
        raise TeacherTrainingError(f"need at least 2 identities, manifest has {train_manifest.num_identities}")

    crops, _ = collect_identity_crops(train_manifest, image_root, tuple(config.input_size))
    if len(crops) < 2:
        raise TeacherTrainingError(f"crops found for only {len(crops)} identities")
    images = torch.cat(list(crops.values()))
    labels = torch.cat([torch.full((len(v),), c - 1, dtype=torch.long) for c, v in crops.items()])

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        teacher = ReIDTeacher(
            train_manifest.num_identities,
            embedding_dim=config.embedding_dim,
            architecture_id=config.architecture_id,
            input_size=config.input_size,
        )
    optimizer = torch.optim.Adam(teacher.trainable_parameters(), lr=config.lr, weight_decay=config.weight_decay)
    generator = torch.Generator().manual_seed(config.seed)
    stats = defaultdict(int)

    teacher.train()
    for epoch in range(1, epochs + 1):
        order = torch.randperm(len(images), generator=generator)
        batches = list(order.split(config.batch_size))
        # BatchNorm needs two samples; fold a trailing singleton into the previous batch
        if len(batches) > 1 and len(batches[-1]) == 1:
            batches[-2] = torch.cat([batches[-2], batches.pop()])
        total, correct, seen = 0.0, 0, 0
        for idx in batches:
            if len(idx) < 2:
                stats["skipped_batches"] += 1
                continue
            feats, logits = teacher(images[idx])
            loss = F.cross_entropy(logits, labels[idx])
            if config.triplet_margin is not None:
                loss = loss + batch_hard_triplet(feats, labels[idx], config.triplet_margin)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(idx)
            correct += int((logits.argmax(1) == labels[idx]).sum())
            seen += len(idx)
            stats["steps"] += 1
        if seen:
            row = {"epoch": epoch, "loss": total / seen, "accuracy": correct / seen}
            if history is not None:
                history.append(row)
            if epoch == 1 or epoch % 10 == 0 or epoch == epochs:
                logger.info(f"teacher epoch {epoch}/{epochs}: loss={row['loss']:.4f} acc={row['accuracy']:.3f}")

    logger.info(f"teacher training done: {dict(stats)}")
    return teacher.freeze()


def save_teacher(teacher: ReIDTeacher, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "num_identities": teacher.classifier.out_features,
            "embedding_dim": teacher.embedding_dim,
            "architecture_id": teacher.architecture_id,
            "input_size": list(teacher.input_size),
            "state": teacher.state_dict(),
        },
        path,
    )
    return path


def load_teacher(path: Union[str, Path]) -> ReIDTeacher:
    archive = torch.load(Path(path), map_location="cpu", weights_only=False)
    teacher = ReIDTeacher(
        archive["num_identities"],
        embedding_dim=archive["embedding_dim"],
        architecture_id=archive["architecture_id"],
        input_size=tuple(archive["input_size"]),
    )
    teacher.load_state_dict(archive["state"])
    return teacher.freeze()
