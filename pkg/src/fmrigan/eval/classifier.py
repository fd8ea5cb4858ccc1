"""Downstream ASD/HC classifier: spatial mean pooling, a small per-frame 3D
conv stack, temporal mean and an MLP head."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ValidationError
from ..nets import CLASS_INDEX, CheckedConv3d, conv_output_shape, reinit_
from ..seqvol import VolumeSequence
from ..training import Adam, stack_dataset
from .stats import ClassifierReport, classification_metrics


@dataclass
class ClassifierConfig:
    pool: int = 4
    channels: tuple[int, ...] = (4, 8)
    kernel: int = 3
    stride: int = 2
    mlp_width: int = 32
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    leak: float = 0.2

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"classifier: unknown fields {unknown}")
        d = dict(d)
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class SequenceClassifier(nn.Module):
    def __init__(self, dims, cfg: ClassifierConfig):
        super().__init__()
        T, *grid = dims
        if any(n < cfg.pool for n in grid):
            raise ConfigError(f"classifier pool factor {cfg.pool} exceeds grid {tuple(grid)}")
        shape = [n // cfg.pool for n in grid]
        pad = cfg.kernel // 2
        convs, in_ch = [], 1
        for i, c in enumerate(cfg.channels):
            convs.append(CheckedConv3d(in_ch, c, cfg.kernel, cfg.stride, pad, tuple(shape)))
            shape = [conv_output_shape(n, cfg.kernel, cfg.stride, pad, f"classifier conv[{i}]") for n in shape]
            in_ch = c
        self.convs = nn.ModuleList(convs)
        self.pool = cfg.pool
        self.leak = cfg.leak
        feats = in_ch * math.prod(shape)
        self.head = nn.Sequential(nn.Linear(feats, cfg.mlp_width), nn.LeakyReLU(cfg.leak), nn.Linear(cfg.mlp_width, 2))

    def forward(self, x):
        B, T = x.shape[:2]
        h = F.avg_pool3d(x.reshape(B * T, 1, *x.shape[2:]), self.pool)
        for conv in self.convs:
            h = F.leaky_relu(conv(h), self.leak)
        h = h.reshape(B, T, -1).mean(dim=1)
        return self.head(h)


@dataclass
class TrainedClassifier:
    model: SequenceClassifier
    best_epoch: int
    best_val_loss: float
    train_losses: list[float]
    val_losses: list[float]

    @torch.no_grad()
    def predict_proba(self, seqs: Sequence[VolumeSequence], batch: int = 16) -> np.ndarray:
        """P(ASD) per sequence."""
        self.model.eval()
        x = torch.from_numpy(np.stack([s.data for s in seqs]))
        out = [torch.softmax(self.model(x[i : i + batch]), dim=1)[:, CLASS_INDEX["ASD"]] for i in range(0, len(x), batch)]
        return torch.cat(out).double().numpy()

    def evaluate(self, seqs: Sequence[VolumeSequence], method: str = "") -> ClassifierReport:
        labels = [CLASS_INDEX[s.label] for s in seqs]
        return classification_metrics(labels, self.predict_proba(seqs), method=method)


def _mean_ce(model, x, y, batch=32):
    with torch.no_grad():
        total = 0.0
        for i in range(0, len(x), batch):
            total += float(F.cross_entropy(model(x[i : i + batch]), y[i : i + batch], reduction="sum"))
    return total / len(x)


def train_classifier(
    train_set: Sequence[VolumeSequence],
    val_set: Sequence[VolumeSequence],
    cfg: ClassifierConfig | None = None,
    seed: int = 0,
) -> TrainedClassifier:
    """Adam on cross-entropy; keeps the parameters of the epoch with the
    lowest validation loss."""
    cfg = cfg or ClassifierConfig()
    if not train_set or not val_set:
        raise ValidationError("classifier needs non-empty training and validation sets")
    x, y = stack_dataset(train_set)
    xv, yv = stack_dataset(val_set)
    model = SequenceClassifier(x.shape[1:], cfg)
    reinit_(model, seed)
    opt = Adam(list(model.named_parameters()), cfg.lr)
    best_state, best_loss, best_epoch = copy.deepcopy(model.state_dict()), _mean_ce(model, xv, yv), -1
    train_losses, val_losses = [], []
    for epoch in range(cfg.epochs):
        model.train()
        perm = torch.from_numpy(np.random.default_rng([seed, 7, epoch]).permutation(len(x)))
        running = 0.0
        for i in range(0, len(x), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            loss = F.cross_entropy(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(idx)
        train_losses.append(running / len(x))
        val_loss = _mean_ce(model, xv, yv)
        val_losses.append(val_loss)
        if val_loss < best_loss:
            best_state, best_loss, best_epoch = copy.deepcopy(model.state_dict()), val_loss, epoch
    model.load_state_dict(best_state)
    return TrainedClassifier(model, best_epoch, best_loss, train_losses, val_losses)
