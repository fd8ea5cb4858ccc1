"""4D volume sequences: data model, on-disk format, normalization, schedules,
dataset splits and the ground-truth phantom generator.

File layout (``.vseq``): ``<name>.json`` header plus ``<name>.f32`` payload of
little-endian float32 in T, D, H, W order (W fastest). Parcellations use the
same scheme with an ``.i32`` payload.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import FormatError, UnsupportedVersionError, ValidationError

FORMAT_VERSION = 1

ASD = "ASD"
HC = "HC"
CLASSES = (ASD, HC)

BIO = "BIO"
SCRAM = "SCRAM"
REST = "REST"
CONDITIONS = (BIO, SCRAM, REST)


@dataclass
class VolumeSequence:
    """One subject's 4D signal with acquisition metadata.

    ``data`` has axes [T, D, H, W] and is stored as float32.
    """

    data: np.ndarray
    subject_id: str
    voxel_size_mm: tuple[float, float, float] = (3.2, 3.2, 3.2)
    frame_interval_s: float = 2.0
    label: str | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.voxel_size_mm = tuple(float(v) for v in self.voxel_size_mm)
        self.validate()

    def validate(self):
        if self.data.ndim != 4:
            raise ValidationError(f"{self.subject_id}: expected 4D data, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValidationError(f"{self.subject_id}: all axes must be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"{self.subject_id}: data contains non-finite values")
        if len(self.voxel_size_mm) != 3 or any(v <= 0 for v in self.voxel_size_mm):
            raise ValidationError(f"{self.subject_id}: voxel_size_mm must be 3 positive reals")
        if not self.frame_interval_s > 0:
            raise ValidationError(f"{self.subject_id}: frame_interval_s must be positive")
        if self.label is not None and self.label not in CLASSES:
            raise ValidationError(f"{self.subject_id}: unknown label {self.label!r}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(int(n) for n in self.data.shape)


@dataclass
class StimulusSchedule:
    conditions: list[str]
    lag_frames: int = 0

    def __post_init__(self):
        bad = [c for c in self.conditions if c not in CONDITIONS]
        if bad:
            raise ValidationError(f"unknown condition tags: {sorted(set(bad))}")
        if self.lag_frames < 0:
            raise ValidationError("lag_frames must be non-negative")

    def __len__(self):
        return len(self.conditions)

    def shifted(self) -> list[str | None]:
        """Per-frame condition after the hemodynamic lag.

        Frame ``t`` takes the tag of stimulus frame ``t - lag``; the first
        ``lag`` frames have no tag and stimulus frames pushed past the end are
        dropped.
        """
        n = len(self.conditions)
        lag = min(self.lag_frames, n)
        return [None] * lag + list(self.conditions[: n - lag])

    def frames(self, condition: str) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.shifted()) if c == condition], dtype=int)


@dataclass
class Parcellation:
    labels: np.ndarray
    region_names: dict[int, str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.region_names = {int(k): str(v) for k, v in self.region_names.items()}
        if self.labels.ndim != 3:
            raise ValidationError(f"parcellation must be 3D, got shape {self.labels.shape}")
        if self.labels.min(initial=0) < 0:
            raise ValidationError("parcellation labels must be non-negative")
        present = set(np.unique(self.labels).tolist())
        missing = [rid for rid in self.region_names if rid not in present]
        if missing:
            raise ValidationError(f"region ids {missing} do not occur in the label volume")

    def region_id(self, key: int | str) -> int:
        if isinstance(key, str) and not key.isdigit():
            for rid, name in self.region_names.items():
                if name == key:
                    return rid
            raise ValidationError(f"unknown region name {key!r}")
        return int(key)


@dataclass
class DatasetSplit:
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    seed: int


@dataclass
class RoiSpec:
    name: str
    center: tuple[int, int, int]
    radius: int
    active: str = BIO
    amplitude_by_class: dict[str, float] = field(default_factory=lambda: {ASD: 1.0, HC: 1.0})


@dataclass
class PhantomSpec:
    """Parameters of the ground-truth phantom.

    Each subject's background is ``baseline`` plus spatially smoothed Gaussian
    noise with standard deviation ``noise_sigma``. Every ROI adds its class
    amplitude during frames of its active condition.
    """

    dims: tuple[int, int, int, int] = (24, 16, 16, 16)
    n_subjects_per_class: int = 8
    rois: list[RoiSpec] = field(default_factory=list)
    baseline: float = 0.0
    noise_sigma: float = 0.1
    spatial_smooth_fwhm: float = 0.0
    block_len_frames: int | list[int] = 4
    order: tuple[str, ...] = (BIO, SCRAM)
    lag_frames: int = 0
    voxel_size_mm: tuple[float, float, float] = (3.2, 3.2, 3.2)
    frame_interval_s: float = 2.0
    seed: int = 0

    def validate(self):
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ValidationError(f"phantom dims must be 4 positive ints, got {self.dims}")
        if self.noise_sigma < 0 or self.spatial_smooth_fwhm < 0:
            raise ValidationError("noise_sigma and spatial_smooth_fwhm must be >= 0")
        if self.n_subjects_per_class < 0:
            raise ValidationError("n_subjects_per_class must be >= 0")
        grid = self.dims[1:]
        for roi in self.rois:
            if roi.active not in (BIO, SCRAM):
                raise ValidationError(f"ROI {roi.name}: active condition must be BIO or SCRAM")
            if roi.radius < 0:
                raise ValidationError(f"ROI {roi.name}: negative radius")
            for c, n in zip(roi.center, grid):
                if c - roi.radius < 0 or c + roi.radius > n - 1:
                    raise ValidationError(
                        f"ROI {roi.name}: sphere at {tuple(roi.center)} r={roi.radius} leaves grid {grid}"
                    )
            for cls in CLASSES:
                if not math.isfinite(roi.amplitude_by_class.get(cls, float("nan"))):
                    raise ValidationError(f"ROI {roi.name}: amplitude for {cls} missing or not finite")


# --------------------------------------------------------------------------
# file I/O


def _pair(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".f32", ".i32", ".vseq") else path
    return stem.with_suffix(".json"), stem


def _read_header(hdr_path: Path) -> dict:
    try:
        header = json.loads(hdr_path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read header {hdr_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{hdr_path}: invalid JSON header ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{hdr_path}: unsupported format_version {version!r}")
    return header


def _read_payload(path: Path, dims, dtype) -> np.ndarray:
    expected = int(np.prod(dims)) * np.dtype(dtype).itemsize
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read payload {path}: {exc}") from exc
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes for dims {list(dims)}, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def write_vseq(seq: VolumeSequence, path) -> None:
    seq.validate()
    hdr_path, stem = _pair(path)
    header = {
        "format_version": FORMAT_VERSION,
        "dims": list(seq.dims),
        "voxel_size_mm": list(seq.voxel_size_mm),
        "frame_interval_s": seq.frame_interval_s,
        "label": seq.label,
        "subject_id": seq.subject_id,
    }
    try:
        hdr_path.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".f32").write_bytes(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())
        hdr_path.write_text(json.dumps(header, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write volume sequence to {hdr_path}: {exc}") from exc


def read_vseq(path) -> VolumeSequence:
    hdr_path, stem = _pair(path)
    header = _read_header(hdr_path)
    try:
        dims = [int(d) for d in header["dims"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{hdr_path}: missing or malformed dims") from exc
    if len(dims) != 4:
        raise FormatError(f"{hdr_path}: dims must have 4 entries, got {dims}")
    if min(dims) < 1:
        raise ValidationError(f"{hdr_path}: all dims must be >= 1, got {dims}")
    data = _read_payload(stem.with_suffix(".f32"), dims, "<f4")
    return VolumeSequence(
        data=data.astype(np.float32),
        subject_id=str(header.get("subject_id", stem.name)),
        voxel_size_mm=tuple(header.get("voxel_size_mm", (1.0, 1.0, 1.0))),
        frame_interval_s=float(header.get("frame_interval_s", 1.0)),
        label=header.get("label"),
    )


def write_parcellation(parc: Parcellation, path) -> None:
    hdr_path, stem = _pair(path)
    header = {
        "format_version": FORMAT_VERSION,
        "dims": list(parc.labels.shape),
        "region_names": {str(k): v for k, v in sorted(parc.region_names.items())},
    }
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".i32").write_bytes(np.ascontiguousarray(parc.labels, dtype="<i4").tobytes())
    hdr_path.write_text(json.dumps(header, indent=2) + "\n")


def read_parcellation(path) -> Parcellation:
    hdr_path, stem = _pair(path)
    header = _read_header(hdr_path)
    dims = [int(d) for d in header["dims"]]
    if len(dims) != 3:
        raise FormatError(f"{hdr_path}: parcellation dims must have 3 entries")
    labels = _read_payload(stem.with_suffix(".i32"), dims, "<i4")
    return Parcellation(labels.astype(np.int32), {int(k): v for k, v in header["region_names"].items()})


def write_schedule(schedule: StimulusSchedule, path) -> None:
    lines = [f"lag_frames: {schedule.lag_frames}"] + list(schedule.conditions)
    Path(path).write_text("\n".join(lines) + "\n")


def read_schedule(path) -> StimulusSchedule:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("lag_frames:"):
        raise FormatError(f"{path}: first line must be 'lag_frames: <n>'")
    lag = int(lines[0].split(":", 1)[1])
    return StimulusSchedule(lines[1:], lag)


def write_dataset(seqs: Sequence[VolumeSequence], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for seq in seqs:
        p = directory / f"{seq.subject_id}.json"
        write_vseq(seq, p)
        paths.append(p)
    return paths


def read_dataset(directory) -> list[VolumeSequence]:
    directory = Path(directory)
    seqs = []
    for hdr in sorted(directory.glob("*.json")):
        if hdr.with_suffix(".f32").exists():
            seqs.append(read_vseq(hdr))
    return seqs


# --------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormParams:
    offset: float
    scale: float


def fit_normalizer(seqs: Sequence[VolumeSequence] | np.ndarray, lower=1.0, upper=99.0) -> NormParams:
    """Affine map sending the lower/upper percentiles of the pooled voxel
    values to -1/+1. Constant input gets unit scale."""
    if isinstance(seqs, np.ndarray):
        values = seqs.ravel()
    else:
        values = np.concatenate([s.data.ravel() for s in seqs])
    lo, hi = np.percentile(values.astype(np.float64), [lower, upper])
    if hi - lo <= 0:
        return NormParams(float(lo), 1.0)
    return NormParams(float((hi + lo) / 2), float((hi - lo) / 2))


def apply_normalizer(seq: VolumeSequence, params: NormParams) -> VolumeSequence:
    data = np.clip((seq.data.astype(np.float64) - params.offset) / params.scale, -1.0, 1.0)
    return VolumeSequence(data.astype(np.float32), seq.subject_id, seq.voxel_size_mm, seq.frame_interval_s, seq.label)


def normalize_sequence(seq: VolumeSequence, params: NormParams | None = None) -> tuple[VolumeSequence, NormParams]:
    """Map ``seq`` into [-1, 1] using its own 1st/99th percentiles, or
    ``params`` when given (e.g. fitted on a whole training set)."""
    if params is None:
        params = fit_normalizer(seq.data)
    return apply_normalizer(seq, params), params


def denormalize(data: np.ndarray, params: NormParams) -> np.ndarray:
    return (np.asarray(data, dtype=np.float64) * params.scale + params.offset).astype(np.float32)


# --------------------------------------------------------------------------
# schedules


def build_block_schedule(T: int, block_len_frames, order=(BIO, SCRAM), lag_frames: int = 0) -> StimulusSchedule:
    """Tile alternating condition blocks over ``T`` frames.

    ``block_len_frames`` is either one length used for every block, or an
    explicit list of block lengths; frames after the last listed block are
    tagged REST.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    order = list(order)
    if not order:
        raise ValidationError("order must name at least one condition")
    if isinstance(block_len_frames, int):
        if block_len_frames < 1:
            raise ValidationError("block_len_frames must be >= 1")
        tags = [order[(t // block_len_frames) % len(order)] for t in range(T)]
    else:
        lengths = [int(n) for n in block_len_frames]
        if any(n < 1 for n in lengths):
            raise ValidationError("block lengths must be >= 1")
        tags = []
        for b, n in enumerate(lengths):
            tags.extend([order[b % len(order)]] * n)
        tags = (tags + [REST] * T)[:T]
    return StimulusSchedule(tags, int(lag_frames))


# --------------------------------------------------------------------------
# phantom


def box_sizes_for_gaussian(sigma: float, n: int = 3) -> list[int]:
    """Odd box widths whose n-fold convolution approximates a Gaussian."""
    w_ideal = math.sqrt(12.0 * sigma**2 / n + 1.0)
    wl = int(math.floor(w_ideal))
    if wl % 2 == 0:
        wl -= 1
    wu = wl + 2
    m_ideal = (12.0 * sigma**2 - n * wl**2 - 4.0 * n * wl - 3.0 * n) / (-4.0 * wl - 4.0)
    m = int(round(m_ideal))
    return [wl if i < m else wu for i in range(n)]


def _smoothing_kernel(fwhm: float) -> tuple[list[int], np.ndarray]:
    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    sizes = box_sizes_for_gaussian(sigma)
    kernel = np.ones(1)
    for s in sizes:
        kernel = np.convolve(kernel, np.full(s, 1.0 / s))
    return sizes, kernel


def smooth_volume(vol: np.ndarray, fwhm: float, axes=(-3, -2, -1)) -> np.ndarray:
    """Separable Gaussian smoothing approximated by three box blurs per axis."""
    if fwhm <= 0:
        return vol
    sizes, _ = _smoothing_kernel(fwhm)
    out = vol.astype(np.float64)
    for ax in axes:
        for s in sizes:
            if s > 1:
                out = uniform_filter1d(out, size=s, axis=ax, mode="reflect")
    return out


def _sphere(grid, center, radius) -> np.ndarray:
    idx = np.indices(grid)
    d2 = sum((idx[i] - center[i]) ** 2 for i in range(3))
    return d2 <= radius**2


def make_phantom(spec: PhantomSpec) -> tuple[list[VolumeSequence], StimulusSchedule, Parcellation]:
    """Generate a labeled dataset with known ROI activations.

    Subjects ``sub-000 ..`` are ASD first, then HC. Each subject draws its own
    noise from ``default_rng([seed, index])`` so results do not depend on the
    number of subjects generated before it.
    """
    spec.validate()
    T, D, H, W = spec.dims
    schedule = build_block_schedule(T, spec.block_len_frames, spec.order, spec.lag_frames)
    shifted = schedule.shifted()

    labels = np.zeros((D, H, W), dtype=np.int32)
    masks = []
    for rid, roi in enumerate(spec.rois, start=1):
        mask = _sphere((D, H, W), roi.center, roi.radius)
        if np.any(labels[mask] != 0):
            raise ValidationError(f"ROI {roi.name} overlaps another ROI")
        labels[mask] = rid
        masks.append(mask)
    parcellation = Parcellation(labels, {rid: roi.name for rid, roi in enumerate(spec.rois, start=1)})

    if spec.spatial_smooth_fwhm > 0:
        _, kernel = _smoothing_kernel(spec.spatial_smooth_fwhm)
        noise_gain = math.sqrt(float(np.sum(kernel**2)) ** 3)
    else:
        noise_gain = 1.0

    seqs = []
    subjects = [ASD] * spec.n_subjects_per_class + [HC] * spec.n_subjects_per_class
    for k, cls in enumerate(subjects):
        rng = np.random.default_rng([spec.seed, k])
        data = np.full((T, D, H, W), spec.baseline, dtype=np.float64)
        if spec.noise_sigma > 0:
            noise = rng.standard_normal((T, D, H, W))
            noise = smooth_volume(noise, spec.spatial_smooth_fwhm) / noise_gain
            data += spec.noise_sigma * noise
        for roi, mask in zip(spec.rois, masks):
            amp = roi.amplitude_by_class[cls]
            for t, cond in enumerate(shifted):
                if cond == roi.active:
                    data[t][mask] += amp
        seqs.append(
            VolumeSequence(data.astype(np.float32), f"sub-{k:03d}", spec.voxel_size_mm, spec.frame_interval_s, cls)
        )
    return seqs, schedule, parcellation


# --------------------------------------------------------------------------
# splits


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Integer sizes summing to ``n``; ties in the fractional part go to the
    later split."""
    quotas = [n * r for r in ratios]
    sizes = [int(math.floor(q + 1e-9)) for q in quotas]
    fracs = [round(q - s, 9) for q, s in zip(quotas, sizes)]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-fracs[i], -i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split_dataset(ids: Sequence[str], ratios=(0.70, 0.15, 0.15), seed: int = 0, sizes=None) -> DatasetSplit:
    """Shuffle ``ids`` deterministically and cut into train/val/test.

    ``sizes`` overrides ``ratios`` with explicit counts, e.g. ``(72, 23, 23)``.
    """
    ids = list(ids)
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValidationError("subject ids must be unique")
    if sizes is None:
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
            raise ValidationError(f"ratios must be 3 non-negative values summing to 1, got {tuple(ratios)}")
        sizes = largest_remainder(len(ids), ratios)
    else:
        sizes = [int(s) for s in sizes]
        if len(sizes) != 3 or sum(sizes) != len(ids) or min(sizes) < 0:
            raise ValidationError(f"explicit sizes {sizes} must be 3 counts summing to {len(ids)}")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(shuffled[:a], shuffled[a:b], shuffled[b:], seed)
