"""Augmentation experiment: enlarge the real training set with Gaussian-noise
copies or generator samples, train one classifier per arm, test on real data."""

from __future__ import annotations

import logging
import math
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from ..seqvol import ASD, HC, VolumeSequence
from ..training import synthesize_dataset
from .classifier import ClassifierConfig, train_classifier
from .stats import ClassifierReport

log = logging.getLogger(__name__)

NONE_ARM = "none"
GAUSSIAN_ARM = "gaussian"


def _noisy_copy(seq: VolumeSequence, sigma: float, rng, suffix: str) -> VolumeSequence:
    noise = rng.standard_normal(seq.data.shape) * sigma if sigma > 0 else 0.0
    return VolumeSequence(
        seq.data.astype(np.float64) + noise, f"{seq.subject_id}-{suffix}", seq.voxel_size_mm, seq.frame_interval_s, seq.label
    )


def augment_gaussian(
    dataset: Sequence[VolumeSequence], sigma: float = 0.1, copies: int = 1, seed: int = 0, keep_originals: bool = True
) -> list[VolumeSequence]:
    """Originals (optionally) followed by ``copies`` noisy versions of each,
    noise i.i.d. N(0, sigma^2) per voxel."""
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    out = list(dataset) if keep_originals else []
    for c in range(copies):
        for i, seq in enumerate(dataset):
            out.append(_noisy_copy(seq, sigma, np.random.default_rng([seed, c, i]), f"g{c}"))
    return out


def gaussian_fill(dataset: Sequence[VolumeSequence], target_size: int, sigma: float = 0.1, seed: int = 0):
    """Real sequences plus noisy copies (cycling through the originals) up to ``target_size``."""
    out = list(dataset)
    for j in range(target_size - len(dataset)):
        c, i = divmod(j, len(dataset))
        out.append(_noisy_copy(dataset[i], sigma, np.random.default_rng([seed, c, i]), f"g{c}"))
    return out


def synthetic_fill(dataset: Sequence[VolumeSequence], target_size: int, model, seed: int = 0):
    """Real sequences plus class-balanced generator samples up to ``target_size``
    (an odd remainder goes to ASD)."""
    extra = target_size - len(dataset)
    if extra <= 0:
        return list(dataset)
    n_asd, n_hc = math.ceil(extra / 2), extra // 2
    synth = synthesize_dataset(model, n_asd, seed)
    asd = [s for s in synth if s.label == ASD][:n_asd]
    hc = [s for s in synth if s.label == HC][:n_hc]
    return list(dataset) + asd + hc


def augmentation_experiment(
    train: Sequence[VolumeSequence],
    val: Sequence[VolumeSequence],
    test: Sequence[VolumeSequence],
    arms: Mapping[str, object],
    target_size: int,
    clf_cfg: ClassifierConfig | None = None,
    seed: int = 0,
    sigma: float = 0.1,
) -> list[ClassifierReport]:
    """One report per arm, in the order given.

    ``arms`` maps a name to ``None`` (no augmentation), the string
    ``"gaussian"``, or a trained :class:`~fmrigan.nets.AlphaGAN`. Arms mapped to
    anything else (e.g. a missing generator) are skipped with a warning. Every
    arm trains a fresh classifier with the same seed.
    """
    if target_size < len(train):
        raise ValidationError(f"target_size {target_size} is smaller than the training set ({len(train)})")
    reports = []
    for name, arm in arms.items():
        if arm is None:
            data = list(train)
        elif isinstance(arm, str) and arm == GAUSSIAN_ARM:
            data = gaussian_fill(train, target_size, sigma, seed)
        elif hasattr(arm, "generator"):
            data = synthetic_fill(train, target_size, arm, seed)
        else:
            log.warning("skipping arm %r: no trained generator available", name)
            continue
        clf = train_classifier(data, val, clf_cfg, seed)
        report = clf.evaluate(test, method=name)
        report.n_train = len(data)
        reports.append(report)
    return reports
