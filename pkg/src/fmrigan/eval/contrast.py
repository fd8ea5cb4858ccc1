"""ROI condition-contrast statistics: per-region mean z-scores over BIO and
SCRAM frames and unpaired t-tests between the two conditions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..seqvol import BIO, REST, SCRAM, Parcellation, StimulusSchedule, VolumeSequence
from .stats import ttest_ind, zscore_series


@dataclass
class RegionContrast:
    region: str
    mean_z_bio: float
    mean_z_scram: float
    n_bio_frames: int
    n_scram_frames: int
    t_statistic: float = float("nan")
    p_value: float = float("nan")


def roi_mean_series(seq: VolumeSequence, parcellation: Parcellation, region) -> np.ndarray:
    """Per-frame mean over the region's voxels."""
    rid = parcellation.region_id(region)
    if seq.dims[1:] != parcellation.labels.shape:
        raise ValidationError(
            f"{seq.subject_id}: grid {seq.dims[1:]} does not match parcellation {parcellation.labels.shape}"
        )
    mask = parcellation.labels == rid
    if not mask.any():
        name = parcellation.region_names.get(rid, str(rid))
        raise ValidationError(f"region {name!r} (id {rid}) has no voxels")
    return seq.data[:, mask].astype(np.float64).mean(axis=1)


def _condition_frames(schedule: StimulusSchedule, T: int) -> dict[str, np.ndarray]:
    if len(schedule) != T:
        raise ValidationError(f"schedule has {len(schedule)} frames, sequences have {T}")
    frames = {c: schedule.frames(c) for c in (BIO, SCRAM, REST)}
    missing = [c for c in (BIO, SCRAM) if frames[c].size == 0]
    if missing:
        raise ValidationError(f"schedule has no {' or '.join(missing)} frames after a lag of {schedule.lag_frames}")
    return frames


def _region_names(parcellation, regions):
    if regions is None:
        regions = sorted(parcellation.region_names)
    return [(parcellation.region_id(r), parcellation.region_names.get(parcellation.region_id(r), str(r))) for r in regions]


def subject_condition_z(series, schedule: StimulusSchedule) -> dict[str, np.ndarray]:
    """Z-score one ROI series over the full scan, then split by condition."""
    z = zscore_series(series)
    return {c: z[idx] for c, idx in _condition_frames(schedule, len(z)).items()}


def condition_mean_z(
    dataset: Sequence[VolumeSequence], schedule: StimulusSchedule, parcellation: Parcellation, regions=None
) -> list[RegionContrast]:
    """Across-subject mean of each subject's average z over BIO and over SCRAM
    frames. REST and untagged frames are excluded."""
    if not dataset:
        raise ValidationError("dataset is empty")
    frames = _condition_frames(schedule, dataset[0].dims[0])
    out = []
    for rid, name in _region_names(parcellation, regions):
        bio, scram = [], []
        for seq in dataset:
            split = subject_condition_z(roi_mean_series(seq, parcellation, rid), schedule)
            bio.append(split[BIO].mean())
            scram.append(split[SCRAM].mean())
        out.append(
            RegionContrast(name, float(np.mean(bio)), float(np.mean(scram)), int(frames[BIO].size), int(frames[SCRAM].size))
        )
    return out


def bio_scram_samples(
    dataset: Sequence[VolumeSequence], schedule: StimulusSchedule, parcellation: Parcellation, region, level="frame"
) -> tuple[np.ndarray, np.ndarray]:
    """BIO and SCRAM samples for one region.

    ``level="frame"`` pools frame-level z values across subjects;
    ``level="subject"`` gives one mean z per subject and condition.
    """
    bio, scram = [], []
    for seq in dataset:
        split = subject_condition_z(roi_mean_series(seq, parcellation, region), schedule)
        if level == "frame":
            bio.append(split[BIO])
            scram.append(split[SCRAM])
        elif level == "subject":
            bio.append([split[BIO].mean()])
            scram.append([split[SCRAM].mean()])
        else:
            raise ValidationError(f"unknown t-test level {level!r}")
    return np.concatenate(bio), np.concatenate(scram)


def bio_scram_ttest(
    dataset: Sequence[VolumeSequence],
    schedule: StimulusSchedule,
    parcellation: Parcellation,
    regions=None,
    welch: bool = False,
    level: str = "frame",
) -> list[RegionContrast]:
    """Per-region mean z plus an unpaired two-tailed t-test of BIO vs SCRAM
    (t > 0 when BIO is higher)."""
    report = condition_mean_z(dataset, schedule, parcellation, regions)
    for row, (rid, _) in zip(report, _region_names(parcellation, regions)):
        bio, scram = bio_scram_samples(dataset, schedule, parcellation, rid, level)
        res = ttest_ind(bio, scram, welch=welch)
        row.t_statistic, row.p_value = res.t, res.p
    return report
