"""Adversarial training loop and checkpoint persistence.

Schedule follows the 3:1 convention: every batch drives three discriminator
optimizer steps followed by one generator step. Runs are deterministic for a
fixed seed (CPU): batch order, weight init, and dropout masks all derive
from it, so two runs produce identical loss traces.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch

from . import conditioning
from .corpus import Corpus
from .errors import FormatError, NumericError, ValidationError
from .networks import (DiscriminatorConfig, GeneratorConfig, PatchDiscriminator,
                       SonarGenerator, build_discriminator, build_generator,
                       d_loss, discriminator_stack, g_loss, patch_accuracy)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 10
    d_steps_per_g_step: int = 3
    l1_weight: float = 100.0
    learning_rate: float = 2e-4
    adam_betas: tuple = (0.5, 0.999)
    seed: int = 0
    checkpoint_every: int = 0  # epochs between snapshots; 0 = final only

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.d_steps_per_g_step) < 1:
            raise ValidationError("epochs, batch_size, d_steps_per_g_step must be >= 1")
        if self.learning_rate <= 0 or self.l1_weight < 0:
            raise ValidationError("learning_rate must be > 0, l1_weight >= 0")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "adam_betas" in kwargs:
            kwargs["adam_betas"] = tuple(kwargs["adam_betas"])
        return cls(**kwargs)


@dataclass
class EpochStats:
    epoch: int
    d_loss: float
    g_adv: float
    l1: float
    d_real_acc: float
    d_fake_acc: float
    d_steps: int
    g_steps: int

    @property
    def d_acc(self) -> float:
        return 0.5 * (self.d_real_acc + self.d_fake_acc)

    def to_dict(self) -> dict:
        return {**self.__dict__, "d_acc": self.d_acc}


@dataclass
class Checkpoint:
    """Directory-backed snapshot; meta.json alone rebuilds network shapes."""

    path: Path
    meta: dict
    generator: SonarGenerator
    discriminator: Optional[PatchDiscriminator] = None

    @property
    def tile_rows(self) -> int:
        return int(self.meta["tile_rows"])

    @property
    def swath_px(self) -> int:
        return int(self.meta["swath_px"])

    @property
    def snippet_rows(self) -> int:
        return int(self.meta["conditioning"]["snippet_rows"])

    @property
    def theta_max(self) -> float:
        return float(self.meta["conditioning"]["theta_max"])

    @property
    def lookahead(self) -> int:
        return int(self.meta["conditioning"]["lookahead"])

    @property
    def gen_config(self) -> GeneratorConfig:
        return GeneratorConfig.from_dict(self.meta["generator_config"])


def _batch_tensors(corpus: Corpus, idx: np.ndarray, theta_max: float):
    """Assemble (gen_in, x_map, snippet_plane, y_real) tensors for a batch."""
    h, w = corpus.tile_rows, corpus.swath_px
    gen_in = np.empty((len(idx), 4, h, w), dtype=np.float32)
    y = np.empty((len(idx), 1, h, w), dtype=np.float32)
    for j, i in enumerate(idx):
        snippet = conditioning.Snippet(rows=corpus.snippet(i),
                                       source_tile_index=None if i == 0 else i - 1)
        block = conditioning.build_conditioning(
            snippet, corpus.theta[i], corpus.sign[i], h, w, theta_max)
        gi = conditioning.assemble_generator_input(corpus.semantic_tile(i), block)
        gen_in[j] = gi.channels
        y[j, 0] = corpus.images[i]
    gen_t = torch.from_numpy(gen_in)
    return (gen_t, gen_t[:, 0:1], gen_t[:, 3:4], torch.from_numpy(y))


def train(corpus: Corpus, train_cfg: TrainConfig,
          gen_cfg: GeneratorConfig = GeneratorConfig(),
          disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
          out_dir: Optional[Path] = None,
          progress: Optional[Callable[[EpochStats], None]] = None):
    """Run the adversarial loop; returns (checkpoint, [EpochStats]).

    Batches are full-size only (the remainder of each shuffled epoch is
    dropped). Snapshots land in out_dir every checkpoint_every epochs and a
    final checkpoint is always written when out_dir is given.
    """
    if len(corpus) < train_cfg.batch_size:
        raise ValidationError(
            f"corpus has {len(corpus)} examples < batch_size {train_cfg.batch_size}")
    torch.manual_seed(train_cfg.seed)
    order_rng = np.random.default_rng(train_cfg.seed)

    gen = build_generator(gen_cfg, seed=train_cfg.seed)
    disc = build_discriminator(disc_cfg, seed=train_cfg.seed + 1)
    gen.train()
    disc.train()
    opt_g = torch.optim.Adam(gen.parameters(), lr=train_cfg.learning_rate,
                             betas=train_cfg.adam_betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=train_cfg.learning_rate,
                             betas=train_cfg.adam_betas)

    theta_max = float(corpus.meta.get("theta_max", conditioning.DEFAULT_THETA_MAX))
    n_batches = len(corpus) // train_cfg.batch_size
    history: List[EpochStats] = []
    t0 = time.time()

    for epoch in range(1, train_cfg.epochs + 1):
        order = order_rng.permutation(len(corpus))
        sums = {"d": 0.0, "g": 0.0, "l1": 0.0, "ra": 0.0, "fa": 0.0}
        d_steps = g_steps = 0
        for b in range(n_batches):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            gen_in, x_map, snippet, y_real = _batch_tensors(corpus, idx, theta_max)

            for _ in range(train_cfg.d_steps_per_g_step):
                with torch.no_grad():
                    y_fake = gen(gen_in)
                opt_d.zero_grad(set_to_none=True)
                loss_d = d_loss(disc, x_map, snippet, y_real, y_fake)
                loss_d.backward()
                opt_d.step()
                d_steps += 1
                sums["d"] += loss_d.item()
                with torch.no_grad():
                    sums["ra"] += patch_accuracy(
                        disc(discriminator_stack(x_map, snippet, y_real)), real=True)
                    sums["fa"] += patch_accuracy(
                        disc(discriminator_stack(x_map, snippet, y_fake)), real=False)

            opt_g.zero_grad(set_to_none=True)
            y_fake = gen(gen_in)
            l1 = torch.mean(torch.abs(y_real - y_fake))
            loss_g = g_loss(disc, x_map, snippet, y_fake, y_real, train_cfg.l1_weight)
            loss_g.backward()
            opt_g.step()
            g_steps += 1
            sums["g"] += loss_g.item() - train_cfg.l1_weight * l1.item()
            sums["l1"] += l1.item()
            if not np.isfinite(sums["d"] + sums["g"] + sums["l1"]):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")

        stats = EpochStats(
            epoch=epoch,
            d_loss=sums["d"] / max(d_steps, 1),
            g_adv=sums["g"] / max(g_steps, 1),
            l1=sums["l1"] / max(g_steps, 1),
            d_real_acc=sums["ra"] / max(d_steps, 1),
            d_fake_acc=sums["fa"] / max(d_steps, 1),
            d_steps=d_steps,
            g_steps=g_steps,
        )
        history.append(stats)
        if progress is not None:
            progress(stats)
        if (out_dir is not None and train_cfg.checkpoint_every
                and epoch % train_cfg.checkpoint_every == 0
                and epoch != train_cfg.epochs):
            save_checkpoint(Path(out_dir) / f"epoch_{epoch:04d}", gen, disc,
                            gen_cfg, disc_cfg, train_cfg, corpus.meta, epoch,
                            history)

    meta = _checkpoint_meta(gen_cfg, disc_cfg, train_cfg, corpus.meta,
                            train_cfg.epochs, history)
    meta["wall_time_s"] = round(time.time() - t0, 3)
    ckpt = Checkpoint(path=Path(out_dir) if out_dir else Path("."), meta=meta,
                      generator=gen, discriminator=disc)
    if out_dir is not None:
        save_checkpoint(Path(out_dir), gen, disc, gen_cfg, disc_cfg, train_cfg,
                        corpus.meta, train_cfg.epochs, history,
                        wall_time_s=meta["wall_time_s"])
    return ckpt, history


def _checkpoint_meta(gen_cfg, disc_cfg, train_cfg, corpus_meta, epoch, history,
                     wall_time_s: Optional[float] = None) -> dict:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "generator_config": gen_cfg.to_dict(),
        "discriminator_config": disc_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "tile_rows": corpus_meta["tile_rows"],
        "swath_px": corpus_meta["swath_px"],
        "conditioning": {
            "snippet_rows": corpus_meta["snippet_rows"],
            "theta_max": corpus_meta.get("theta_max", conditioning.DEFAULT_THETA_MAX),
            "lookahead": corpus_meta.get("lookahead", conditioning.DEFAULT_LOOKAHEAD),
        },
        "epoch": epoch,
        "metrics": [s.to_dict() for s in history],
    }
    if wall_time_s is not None:
        meta["wall_time_s"] = wall_time_s
    return meta


def save_checkpoint(path: Path, gen, disc, gen_cfg, disc_cfg, train_cfg,
                    corpus_meta, epoch, history,
                    wall_time_s: Optional[float] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(gen.state_dict(), path / "gen.pt")
    if disc is not None:
        torch.save(disc.state_dict(), path / "disc.pt")
    meta = _checkpoint_meta(gen_cfg, disc_cfg, train_cfg, corpus_meta, epoch,
                            history, wall_time_s)
    (path / "meta.json").write_text(json.dumps(meta, indent=2))
    return path


def load_checkpoint(path, with_discriminator: bool = False) -> Checkpoint:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{path}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version")
    gen = build_generator(GeneratorConfig.from_dict(meta["generator_config"]))
    gen.load_state_dict(torch.load(path / "gen.pt", weights_only=True))
    gen.eval()
    disc = None
    if with_discriminator and (path / "disc.pt").exists():
        disc = build_discriminator(
            DiscriminatorConfig.from_dict(meta["discriminator_config"]))
        disc.load_state_dict(torch.load(path / "disc.pt", weights_only=True))
        disc.eval()
    return Checkpoint(path=path, meta=meta, generator=gen, discriminator=disc)
