"""Run configuration: one JSON document holding every setting of a pipeline run.

A config file only needs the fields it changes. ``resolve_config`` fills the
rest from the selected profile (``desk`` by default, ``paper`` for full-size
volumes), applies ``--set`` overrides and runs the cross-field checks.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError, ValidationError
from .eval.classifier import ClassifierConfig
from .nets import TEMPORAL_KINDS, ArchConfig
from .seqvol import ASD, BIO, HC, SCRAM, PhantomSpec, RoiSpec, largest_remainder
from .training import TrainConfig

DESK = "desk"
PAPER = "paper"
PROFILES = (DESK, PAPER)
ARM_NAMES = ("none", "gaussian") + TEMPORAL_KINDS
REPORTED_LR_EG = 4.0


def _roi(name, center, radius, active, asd, hc):
    return {"name": name, "center": list(center), "radius": radius, "active": active, "amplitude_by_class": {ASD: asd, HC: hc}}


def _desk_defaults() -> dict:
    return {
        "profile": DESK,
        "seed": 0,
        "reported_lr_eg": False,
        "paths": {},
        "phantom": {
            "dims": [24, 16, 16, 16],
            "n_subjects_per_class": 8,
            "rois": [
                _roi("bio_roi", (4, 4, 8), 3, BIO, 1.0, 0.5),
                _roi("scram_roi", (11, 11, 8), 3, SCRAM, 0.5, 1.0),
                _roi("null_roi", (4, 11, 8), 2, BIO, 0.0, 0.0),
            ],
            "noise_sigma": 0.2,
            "spatial_smooth_fwhm": 2.0,
            "block_len_frames": 4,
        },
        "split": {"ratios": [0.7, 0.15, 0.15], "sizes": None},
        "arch": ArchConfig().to_dict(),
        "train": asdict(TrainConfig(pretrain_epochs=20, gan_epochs=20)),
        "eval": {
            "regions": None,
            "level": "frame",
            "welch": False,
            "pca_dims": 100,
            "perplexity": 30.0,
            "tsne_iter": 1000,
            "n_synth_per_class": 40,
            "classifier": ClassifierConfig().to_dict(),
            "arms": list(ARM_NAMES),
            "target_size": None,
            "gaussian_sigma": 0.1,
            "svg_axes": [0, 1],
        },
    }


def _paper_defaults() -> dict:
    d = _desk_defaults()
    d["profile"] = PAPER
    d["phantom"].update(
        dims=[146, 91, 109, 91],
        n_subjects_per_class=59,
        rois=[
            _roi("bio_roi", (30, 40, 45), 6, BIO, 1.0, 0.5),
            _roi("scram_roi", (60, 40, 45), 6, SCRAM, 0.5, 1.0),
            _roi("null_roi", (45, 80, 45), 5, BIO, 0.0, 0.0),
        ],
        block_len_frames=12,
    )
    d["split"] = {"ratios": [0.7, 0.15, 0.15], "sizes": [72, 23, 23]}
    d["arch"] = ArchConfig.paper().to_dict()
    d["train"] = asdict(TrainConfig.paper())
    d["eval"].update(n_synth_per_class=100, target_size=792)
    return d


def profile_defaults(name: str) -> dict:
    if name == DESK:
        return _desk_defaults()
    if name == PAPER:
        return _paper_defaults()
    raise ConfigError(f"profile: unknown profile {name!r}; expected one of {PROFILES}")


# --------------------------------------------------------------------------
# typed sections


@dataclass
class PathsConfig:
    data: str | None = None
    split: str | None = None
    checkpoint: str | None = None
    init: str | None = None
    resume: str | None = None
    synthetic: str | None = None
    generators: dict[str, str] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    out: str | None = None


@dataclass
class SplitConfig:
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    sizes: tuple[int, int, int] | None = None


@dataclass
class EvalConfig:
    regions: list[str] | None = None
    level: str = "frame"
    welch: bool = False
    pca_dims: int = 100
    perplexity: float = 30.0
    tsne_iter: int = 1000
    n_synth_per_class: int = 40
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    arms: list[str] = field(default_factory=lambda: list(ARM_NAMES))
    target_size: int | None = None
    gaussian_sigma: float = 0.1
    svg_axes: tuple[int, int] = (0, 1)


@dataclass
class RunConfig:
    profile: str
    seed: int
    reported_lr_eg: bool
    paths: PathsConfig
    phantom: PhantomSpec
    split: SplitConfig
    arch: ArchConfig
    train: TrainConfig
    eval: EvalConfig

    def to_dict(self) -> dict:
        phantom = asdict(self.phantom)
        phantom["dims"] = list(self.phantom.dims)
        phantom["order"] = list(self.phantom.order)
        phantom["voxel_size_mm"] = list(self.phantom.voxel_size_mm)
        for roi in phantom["rois"]:
            roi["center"] = list(roi["center"])
        ev = asdict(self.eval)
        ev["classifier"] = self.eval.classifier.to_dict()
        ev["svg_axes"] = list(self.eval.svg_axes)
        split = {"ratios": list(self.split.ratios), "sizes": list(self.split.sizes) if self.split.sizes else None}
        return {
            "profile": self.profile,
            "seed": self.seed,
            "reported_lr_eg": self.reported_lr_eg,
            "paths": asdict(self.paths),
            "phantom": phantom,
            "split": split,
            "arch": self.arch.to_dict(),
            "train": asdict(self.train),
            "eval": ev,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def n_subjects(self) -> int:
        return 2 * self.phantom.n_subjects_per_class

    def split_sizes(self, n: int | None = None) -> list[int]:
        n = self.n_subjects if n is None else n
        if self.split.sizes is not None:
            return list(self.split.sizes)
        return largest_remainder(n, self.split.ratios)


# --------------------------------------------------------------------------
# loading and merging


def deep_merge(base: dict, update: dict) -> dict:
    """Recursive dict merge; lists and scalars in ``update`` replace."""
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b=c`` into (["a", "b"], value); the value is parsed as JSON when
    possible and kept as a string otherwise."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".")]
    if not all(parts):
        raise ConfigError(f"override {item!r} has an empty key component")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides or ():
        parts, value = parse_override(item)
        node = out
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
            node = child
        node[parts[-1]] = value
    return out


def read_config_file(path) -> dict:
    """Raw dict from a config file or from a run manifest (its ``config`` entry)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if not text.strip():
        raise ConfigError(f"config file {path} is empty")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if "manifest_version" in raw:
        if not isinstance(raw.get("config"), dict):
            raise ConfigError(f"{path}: manifest has no config entry")
        return raw["config"]
    return raw


# --------------------------------------------------------------------------
# building typed sections


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name)
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: must be an object")
    return value


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown field {unknown[0]!r}")


def _build_phantom(d: dict) -> PhantomSpec:
    _check_keys(d, PhantomSpec.__dataclass_fields__, "phantom")
    d = dict(d)
    rois = []
    for i, r in enumerate(d.pop("rois", [])):
        if not isinstance(r, dict):
            raise ConfigError(f"phantom.rois[{i}]: must be an object")
        _check_keys(r, RoiSpec.__dataclass_fields__, f"phantom.rois[{i}]")
        try:
            rois.append(RoiSpec(**{**r, "center": tuple(int(c) for c in r["center"])}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"phantom.rois[{i}]: {exc}") from exc
    for key in ("dims", "voxel_size_mm", "order"):
        if key in d:
            d[key] = tuple(d[key])
    if isinstance(d.get("block_len_frames"), list):
        d["block_len_frames"] = [int(v) for v in d["block_len_frames"]]
    spec = PhantomSpec(rois=rois, **d)
    try:
        spec.validate()
    except ValidationError as exc:
        raise ConfigError(f"phantom: {exc}") from exc
    return spec


def _build_eval(d: dict) -> EvalConfig:
    _check_keys(d, EvalConfig.__dataclass_fields__, "eval")
    d = dict(d)
    d["classifier"] = ClassifierConfig.from_dict(d.get("classifier", {}))
    if "svg_axes" in d:
        d["svg_axes"] = tuple(int(a) for a in d["svg_axes"])
    if isinstance(d.get("arms"), str):
        d["arms"] = [a for a in d["arms"].split(",") if a]
    return EvalConfig(**d)


def _typed(raw: dict) -> RunConfig:
    _check_keys(raw, RunConfig.__dataclass_fields__, "config")
    paths = _section(raw, "paths")
    _check_keys(paths, PathsConfig.__dataclass_fields__, "paths")
    split = _section(raw, "split")
    _check_keys(split, SplitConfig.__dataclass_fields__, "split")
    split_cfg = SplitConfig(
        tuple(float(r) for r in split.get("ratios", (0.7, 0.15, 0.15))),
        tuple(int(s) for s in split["sizes"]) if split.get("sizes") is not None else None,
    )
    arch = ArchConfig.from_dict(_section(raw, "arch"))
    train = TrainConfig.from_dict(_section(raw, "train"))
    return RunConfig(
        profile=raw["profile"],
        seed=int(raw["seed"]),
        reported_lr_eg=bool(raw.get("reported_lr_eg", False)),
        paths=PathsConfig(**paths),
        phantom=_build_phantom(_section(raw, "phantom")),
        split=split_cfg,
        arch=arch,
        train=train,
        eval=_build_eval(_section(raw, "eval")),
    )


# --------------------------------------------------------------------------
# validation


def check_config(cfg: RunConfig) -> RunConfig:
    """Cross-field checks; the first failure raises with a field path."""
    try:
        cfg.arch.validate()
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("arch") else f"arch: {msg}") from exc
    cfg.train.validate()
    if tuple(cfg.phantom.dims) != tuple(cfg.arch.dims):
        raise ConfigError(
            f"phantom.dims {list(cfg.phantom.dims)} conflicts with arch.dims {list(cfg.arch.dims)}"
        )

    r = cfg.split.ratios
    if cfg.split.sizes is None:
        if len(r) != 3 or any(v < 0 for v in r) or abs(sum(r) - 1) > 1e-9:
            raise ConfigError(f"split.ratios must be 3 non-negative values summing to 1, got {list(r)}")
    elif len(cfg.split.sizes) != 3 or sum(cfg.split.sizes) != cfg.n_subjects or min(cfg.split.sizes) < 0:
        raise ConfigError(
            f"split.sizes {list(cfg.split.sizes)} must be 3 counts summing to phantom.n_subjects_per_class x 2 = {cfg.n_subjects}"
        )

    ev = cfg.eval
    if ev.level not in ("frame", "subject"):
        raise ConfigError(f"eval.level must be 'frame' or 'subject', got {ev.level!r}")
    for arm in ev.arms:
        if arm not in ARM_NAMES:
            raise ConfigError(f"eval.arms: unknown arm {arm!r}; expected names from {ARM_NAMES}")
    if len(set(ev.arms)) != len(ev.arms):
        raise ConfigError("eval.arms: duplicate arm names")
    if ev.pca_dims < 1:
        raise ConfigError("eval.pca_dims must be >= 1")
    if ev.tsne_iter < 1:
        raise ConfigError("eval.tsne_iter must be >= 1")
    if ev.n_synth_per_class < 0:
        raise ConfigError("eval.n_synth_per_class must be >= 0")
    if ev.gaussian_sigma < 0:
        raise ConfigError("eval.gaussian_sigma must be >= 0")
    if not (math.isfinite(ev.perplexity) and ev.perplexity > 0):
        raise ConfigError("eval.perplexity must be a positive number")
    n_embed = cfg.n_subjects + 2 * ev.n_synth_per_class
    if n_embed <= 3 * ev.perplexity:
        raise ConfigError(
            f"eval.perplexity {ev.perplexity} is infeasible for {n_embed} embedded sequences "
            f"(phantom subjects + 2 x eval.n_synth_per_class); need n > 3 x perplexity"
        )
    if len(ev.svg_axes) != 2 or not all(0 <= a < 3 for a in ev.svg_axes):
        raise ConfigError("eval.svg_axes must be two axis indices in 0..2")
    n_train = cfg.split_sizes()[0]
    if ev.target_size is not None and ev.target_size < n_train:
        raise ConfigError(f"eval.target_size {ev.target_size} is below the training split size {n_train}")

    c = ev.classifier
    if c.pool < 1 or any(d < c.pool for d in cfg.arch.dims[1:]):
        raise ConfigError(f"eval.classifier.pool {c.pool} exceeds a spatial dim of arch.dims {list(cfg.arch.dims[1:])}")
    if not c.kernel >= c.stride >= 1 or not c.channels or c.epochs < 1 or c.batch_size < 1 or c.lr <= 0:
        raise ConfigError("eval.classifier: need kernel >= stride >= 1, channels, epochs >= 1, batch_size >= 1, lr > 0")
    return cfg


def resolve_config(raw: dict | None = None, overrides=(), profile: str | None = None, seed: int | None = None) -> RunConfig:
    """Defaults + ``raw`` + overrides, then typed and checked."""
    raw = dict(raw or {})
    if profile is not None:
        raw["profile"] = profile
    raw = apply_overrides(raw, overrides)
    name = raw.get("profile", DESK)
    if name not in PROFILES:
        raise ConfigError(f"profile: unknown profile {name!r}; expected one of {PROFILES}")
    merged = deep_merge(profile_defaults(name), raw)
    if seed is not None:
        merged["seed"] = seed
    # component seeds follow the global seed unless pinned explicitly
    for section in ("phantom", "train"):
        if "seed" not in raw.get(section, {}):
            merged[section]["seed"] = merged["seed"]
    if merged.get("reported_lr_eg"):
        merged["train"]["lr_eg"] = REPORTED_LR_EG
    try:
        cfg = _typed(merged)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return check_config(cfg)


def validate_config(path, overrides=(), profile: str | None = None, seed: int | None = None) -> RunConfig:
    """Load a config file (or a run manifest) into a normalized RunConfig."""
    return resolve_config(read_config_file(path), overrides, profile, seed)
