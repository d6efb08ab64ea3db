"""
Stage-2: joint detection and identification training.

The prompt bank, the text encoder and the teacher are frozen inputs; a
hash audit checks them every `audit_every` steps. Batches of an epoch
depend only on (seed, epoch), and checkpoints carry the RNG state, so a
resumed run replays the uninterrupted one step for step.
"""

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import orjson
import torch

from datamodel.errors import ContractError
from datamodel.records import DatasetManifest
from losses.bundle import LossBundle, total_loss
from losses.oim import IdentityLookupTable
from models.checkpoint import load_checkpoint, restore_rng, save_checkpoint
from models.contracts import TextEncoder
from models.reid_teacher import ReIDTeacher
from models.search_net import VehicleSearchNet
from prompts.bank import IdentityPromptBank, encode_bank
from prompts.objects import build_object_prompts
from training.audit import FrozenAudit
from training.config import TrainConfig
from training.data import MissingImagesError, FrameDataset, epoch_batches, frame_loader, missing_images, seed_everything
from training.objective import ObjectiveContext, compute_components

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    step: int
    model: VehicleSearchNet
    lookup_table: IdentityLookupTable
    bank: IdentityPromptBank
    teacher: Optional[ReIDTeacher]
    history: List[Dict[str, float]] = field(default_factory=list)
    frozen_hashes: Dict[str, str] = field(default_factory=dict)
    last_checkpoint: Optional[Path] = None


class Stage2Trainer:
    def __init__(
        self,
        config: TrainConfig,
        train_manifest: DatasetManifest,
        bank: IdentityPromptBank,
        teacher: Optional[ReIDTeacher],
        text_encoder: TextEncoder,
        image_root: Union[str, Path],
    ):
        seed_everything(config.seed, config.deterministic)
        self.config = config
        self.device = torch.device(config.device)
        self.backbone_config = config.backbone_config()
        num_identities = train_manifest.num_identities
        o = self.backbone_config.embedding_dim
        if bank.num_identities != num_identities:
            raise ContractError(f"prompt bank holds {bank.num_identities} identities, manifest has {num_identities}")
        if teacher is None and config.losses.toggles.mil_fea:
            raise ContractError("feature-level identification is enabled but no teacher was given")
        if teacher is not None and teacher.embedding_dim != o:
            raise ContractError(f"teacher embeds to {teacher.embedding_dim} dims, search embeddings have {o}")
        missing = missing_images(train_manifest, image_root)
        if missing:
            raise MissingImagesError(missing)

        self.model = VehicleSearchNet(self.backbone_config, num_identities, text_encoder.text_dim).to(self.device)
        losses = config.losses
        self.lookup_table = IdentityLookupTable(
            num_identities, o, losses.oim_queue_size, losses.oim_momentum, losses.oim_temperature
        ).to(self.device)
        self.dataset = FrameDataset(train_manifest, image_root, self.backbone_config.image_size)
        self.steps_per_epoch = math.ceil(len(self.dataset) / config.batch_size)
        self.total_steps = config.max_steps or self.steps_per_epoch * config.max_epochs

        params = [p for p in self.model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.SGD(
            params, lr=config.optim.lr, momentum=config.optim.momentum, weight_decay=config.optim.weight_decay
        )
        milestone = max(1, int(self.total_steps * config.optim.decay_at))
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(self.optimizer, [milestone], gamma=config.optim.gamma)

        if not bool(bank.encoded.abs().sum() > 0):
            encode_bank(bank, text_encoder)
        object_prompts = build_object_prompts(text_encoder)
        self.bank = bank.to(self.device)
        self.teacher = teacher.to(self.device) if teacher is not None else None
        self.text_encoder = text_encoder
        self.context = ObjectiveContext(
            t_fore=object_prompts.t_fore.to(self.device),
            t_back=object_prompts.t_back.to(self.device),
            identity_text=self.bank.encoded,
            lookup_table=self.lookup_table,
            toggles=losses.toggles,
            oim_on=losses.oim_on,
            teacher=self.teacher,
            teacher_input_size=self.backbone_config.teacher_input_size,
        )
        self.audit = FrozenAudit({"teacher": self.teacher, "prompt_bank": self.bank, "text_encoder": text_encoder})

        self.step = 0
        self.history: List[Dict[str, float]] = []
        self.stats = defaultdict(int)
        self.last_checkpoint: Optional[Path] = None
        self.saved_step = -1

    # ------------------------------------------------------------ persistence

    def _meta(self) -> dict:
        return {
            "train": self.config.model_dump(mode="json"),
            "model": {"num_identities": self.model.num_identities, "text_dim": self.model.text_dim},
        }

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        path = Path(path) if path is not None else self.config.checkpoint_dir / f"step_{self.step:07d}.pt"
        self.last_checkpoint = save_checkpoint(
            path,
            self.model,
            self.backbone_config,
            self.step,
            lookup_table=self.lookup_table,
            prompt_bank=self.bank,
            optimizer=self.optimizer,
            scheduler=self.scheduler,
            config=self._meta(),
        )
        self.saved_step = self.step
        self.stats["checkpoints"] += 1
        return self.last_checkpoint

    def load_state(self, archive: dict) -> None:
        """Restore weights, table, optimizer, scheduler, step and RNG from a loaded checkpoint."""
        self.model.load_state_dict(archive["model"])
        if archive.get("lookup_table") is not None:
            self.lookup_table.load_state_dict(archive["lookup_table"])
        if archive.get("optimizer") is not None:
            self.optimizer.load_state_dict(archive["optimizer"])
        if archive.get("scheduler") is not None:
            self.scheduler.load_state_dict(archive["scheduler"])
        self.step = int(archive["step"])
        if archive.get("rng") is not None:
            restore_rng(archive["rng"])
        logger.info(f"Resumed stage-2 at step {self.step}")

    @classmethod
    def resume(
        cls,
        checkpoint: Union[str, Path],
        config: TrainConfig,
        train_manifest: DatasetManifest,
        teacher: Optional[ReIDTeacher],
        text_encoder: TextEncoder,
        image_root: Union[str, Path],
        bank: Optional[IdentityPromptBank] = None,
    ) -> "Stage2Trainer":
        archive = load_checkpoint(checkpoint)
        if bank is None:
            if archive.get("prompt_bank") is None:
                raise ContractError(f"{checkpoint} carries no prompt bank")
            bank = IdentityPromptBank.from_export(archive["prompt_bank"], text_encoder)
        trainer = cls(config, train_manifest, bank, teacher, text_encoder, image_root)
        trainer.load_state(archive)
        return trainer

    # -------------------------------------------------------------- training

    def _append_metrics(self, row: Dict[str, float]) -> None:
        path = self.config.metrics_path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "ab") as f:
            f.write(orjson.dumps(row) + b"\n")

    def train_step(self, images: torch.Tensor, targets) -> LossBundle:
        self.model.train()
        images = images.to(self.device)
        out = self.model(images, targets)
        components = compute_components(out, images, targets, self.context)
        bundle = total_loss(components, self.config.losses.toggles, step=self.step + 1)

        lr = self.optimizer.param_groups[0]["lr"]
        self.optimizer.zero_grad()
        bundle.total.backward()
        if self.config.optim.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.optim.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1

        row = {"step": self.step, **bundle.as_floats(), "lr": lr}
        self.history.append(row)
        self._append_metrics(row)
        return bundle

    def train(self, max_steps: Optional[int] = None) -> TrainState:
        target = self.total_steps if max_steps is None else min(self.total_steps, max_steps)
        if self.step == 0 and self.config.metrics_path.exists():
            self.config.metrics_path.unlink()
        start = time.time()
        logger.info(f"Stage-2 training from step {self.step} to {target} ({self.steps_per_epoch} steps per epoch)")

        while self.step < target:
            epoch, skip = divmod(self.step, self.steps_per_epoch)
            batches = epoch_batches(len(self.dataset), self.config.batch_size, self.config.seed, epoch)[skip:]
            loader = frame_loader(self.dataset, batches, self.config.seed, self.config.data.num_workers)
            for images, targets, _ in loader:
                bundle = self.train_step(images, targets)
                if self.step % self.config.log_every == 0 or self.step == 1:
                    logger.info(
                        f"step {self.step}/{target} total={float(bundle.total):.4f} "
                        f"det={float(bundle.det):.4f} reid={float(bundle.reid):.4f}"
                    )
                if self.step % self.config.audit_every == 0:
                    self.audit.check(self.step)
                if self.step % self.config.checkpoint_every == 0:
                    self.save()
                if self.step >= target:
                    break
            self.stats["epochs"] += 1

        self.audit.check(self.step)
        if self.saved_step != self.step:
            self.save()
        self.stats["steps"] = self.step
        logger.info(f"Stage-2 finished at step {self.step} in {time.time() - start:.1f}s")
        return self.state()

    def state(self) -> TrainState:
        return TrainState(
            step=self.step,
            model=self.model,
            lookup_table=self.lookup_table,
            bank=self.bank,
            teacher=self.teacher,
            history=self.history,
            frozen_hashes=dict(self.audit.baseline),
            last_checkpoint=self.last_checkpoint,
        )

    def print_stats(self, elapsed_time: float = 0):
        """Print training statistics."""
        print("\n" + "=" * 80)
        print("STAGE-2 TRAINING STATISTICS")
        print("=" * 80)
        print(f"Steps: {self.step}")
        print(f"Epochs started: {self.stats['epochs']}")
        print(f"Checkpoints written: {self.stats['checkpoints']}")
        if self.history:
            last = self.history[-1]
            print(f"Last total loss: {last['total']:.4f}  (det {last['det']:.4f}, reid {last['reid']:.4f})")
        if elapsed_time > 0:
            print(f"\nTotal time: {elapsed_time:.2f}s")
        print("=" * 80 + "\n")


def train_stage2(
    config: TrainConfig,
    train_manifest: DatasetManifest,
    bank: IdentityPromptBank,
    teacher: Optional[ReIDTeacher],
    text_encoder: TextEncoder,
    image_root: Union[str, Path],
    resume_from: Optional[Union[str, Path]] = None,
) -> TrainState:
    if resume_from is not None:
        trainer = Stage2Trainer.resume(resume_from, config, train_manifest, teacher, text_encoder, image_root, bank)
    else:
        trainer = Stage2Trainer(config, train_manifest, bank, teacher, text_encoder, image_root)
    return trainer.train()
