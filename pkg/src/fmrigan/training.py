"""Two-stage alpha-GAN optimization: autoencoder pretraining, then the
three-step adversarial loop (encoder-generator, discriminator, code
discriminator), plus prior sampling, dataset synthesis and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError, FormatError, TrainingDiverged, UnsupportedVersionError, ValidationError
from .nets import CLASS_INDEX, INDEX_CLASS, AlphaGAN, ArchConfig, init_params
from .seqvol import CLASSES, VolumeSequence

log = logging.getLogger(__name__)

LOG_EPS = 1e-7
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    pretrain_epochs: int = 20
    gan_epochs: int = 100
    batch_size: int = 1
    max_pretrain_steps: int | None = None
    max_gan_steps: int | None = None
    lr_pretrain: float = 1e-3
    lr_eg: float = 1e-4
    lr_d: float = 1e-6
    lr_c: float = 2e-5
    lam: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        # the reported encoder-generator rate of 4 only applies when asked for explicitly
        base = dict(pretrain_epochs=20, gan_epochs=100, batch_size=1, lr_eg=1e-4, lr_d=1e-6, lr_c=2e-5)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"train: unknown fields {unknown}")
        return cls(**d)

    def validate(self) -> "TrainConfig":
        for name in ("lr_pretrain", "lr_eg", "lr_d", "lr_c"):
            # zero is allowed and freezes the component
            if not getattr(self, name) >= 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.lam < 0:
            raise ConfigError("train.lam must be >= 0")
        if self.pretrain_epochs < 0 or self.gan_epochs < 0:
            raise ConfigError("train epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        return self


# --------------------------------------------------------------------------
# losses


def _clamp(p):
    if isinstance(p, torch.Tensor):
        return p.clamp(LOG_EPS, 1 - LOG_EPS)
    return min(max(float(p), LOG_EPS), 1 - LOG_EPS)


def _log(p):
    return torch.log(p) if isinstance(p, torch.Tensor) else math.log(p)


def _mean(v):
    return v.mean() if isinstance(v, torch.Tensor) else v


def loss_encoder_generator(d_recon, d_fake, c_real, mae, lam):
    d_recon, d_fake, c_real = _clamp(d_recon), _clamp(d_fake), _clamp(c_real)
    return lam * mae + _mean(-_log(d_recon) - _log(d_fake) - _log(1 - c_real))


def loss_discriminator(d_real, d_recon, d_fake):
    d_real, d_recon, d_fake = _clamp(d_real), _clamp(d_recon), _clamp(d_fake)
    return _mean(-_log(d_real) - _log(1 - d_recon) - _log(1 - d_fake))


def loss_code_discriminator(c_real, c_rand):
    c_real, c_rand = _clamp(c_real), _clamp(c_rand)
    return _mean(-_log(c_real) - _log(1 - c_rand))


def alpha_gan_losses(d_real, d_recon, d_fake, c_real, c_rand, mae, lam):
    """All three objectives from discriminator outputs.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logs; batched
    tensors are averaged over the batch.
    """
    return (
        loss_encoder_generator(d_recon, d_fake, c_real, mae, lam),
        loss_discriminator(d_real, d_recon, d_fake),
        loss_code_discriminator(c_real, c_rand),
    )


# --------------------------------------------------------------------------
# optimizer


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One bias-corrected Adam update. ``state`` is ``(m, v)``; returns
    ``(new_param, (m, v))`` without mutating the inputs."""
    if t < 1:
        raise ValidationError("adam step counter t must be >= 1")
    m, v = state
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    sqrt = torch.sqrt if isinstance(v_hat, torch.Tensor) else np.sqrt
    return param - lr * m_hat / (sqrt(v_hat) + eps), (m, v)


class Adam:
    """Adam over a named set of parameters, driven by :func:`adam_step`."""

    def __init__(self, named_params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.state = {n: (torch.zeros_like(p), torch.zeros_like(p)) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self):
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            new_p, self.state[name] = adam_step(
                p, p.grad, self.state[name], self.lr, self.betas[0], self.betas[1], self.eps, self.t
            )
            p.copy_(new_p)


def make_optimizers(model: AlphaGAN, cfg: TrainConfig, pretrain=False) -> dict[str, Adam]:
    betas = (cfg.beta1, cfg.beta2)

    def named(*groups):
        return [(f"{g}.{n}", p) for g in groups for n, p in model.group(g).named_parameters()]

    if pretrain:
        return {"ae": Adam(named("encoder", "generator"), cfg.lr_pretrain, betas, cfg.eps)}
    return {
        "eg": Adam(named("encoder", "generator"), cfg.lr_eg, betas, cfg.eps),
        "d": Adam(named("discriminator"), cfg.lr_d, betas, cfg.eps),
        "c": Adam(named("code_discriminator"), cfg.lr_c, betas, cfg.eps),
    }


# --------------------------------------------------------------------------
# history


@dataclass
class TrainHistory:
    columns: tuple[str, ...] = ("step", "loss_eg", "loss_d", "loss_c", "mae", "seconds")
    records: list[dict] = field(default_factory=list)

    def append(self, **row):
        self.records.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for r in self.records:
                writer.writerow([r["step"]] + [f"{float(r[c]):.9g}" for c in self.columns[1:]])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            return cls()
        cols = tuple(rows[0].keys())
        return cls(cols, [{k: int(v) if k == "step" else float(v) for k, v in r.items()} for r in rows])


PRETRAIN_COLUMNS = ("step", "mse", "mae", "seconds")


# --------------------------------------------------------------------------
# data helpers


def stack_dataset(seqs: Sequence[VolumeSequence], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    if not seqs:
        raise ValidationError("dataset is empty")
    dims = {s.dims for s in seqs}
    if len(dims) != 1:
        raise ValidationError(f"dataset mixes sequence shapes {sorted(dims)}")
    if any(s.label is None for s in seqs):
        raise ValidationError("training requires labeled sequences")
    x = torch.from_numpy(np.stack([s.data for s in seqs])).to(dtype)
    y = torch.tensor([CLASS_INDEX[s.label] for s in seqs], dtype=torch.long)
    return x, y


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Sample indices for global ``step``: a fresh permutation per epoch, so
    any step can be reproduced without replaying the earlier ones."""
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, 1, epoch]).permutation(n)
    return perm[k * batch_size : (k + 1) * batch_size]


def sample_prior(n: int, z_dim: int, seed, dtype=torch.float32) -> torch.Tensor:
    """``n`` i.i.d. standard-normal codes of length ``z_dim``."""
    if n < 1:
        raise ValidationError("sample_prior needs n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return torch.from_numpy(rng.standard_normal((n, z_dim))).to(dtype)


def _check_finite(model, step, losses, checkpoint=None):
    bad_loss = {k: v for k, v in losses.items() if not math.isfinite(v)}
    norms = {}
    bad_param = None
    for name, p in model.named_parameters():
        norm = float(p.detach().double().norm())
        norms[name] = norm
        if bad_param is None and not math.isfinite(norm):
            bad_param = name
    if bad_loss or bad_param:
        what = f"losses {bad_loss}" if bad_loss else f"parameter {bad_param}"
        raise TrainingDiverged(
            f"non-finite {what} at step {step}" + (f"; last good checkpoint: {checkpoint}" if checkpoint else ""),
            step=step,
            losses=losses,
            param_norms=norms,
            checkpoint=checkpoint,
        )


def _total_steps(n, cfg, epochs, cap):
    steps = epochs * math.ceil(n / cfg.batch_size)
    return steps if cap is None else min(steps, cap)


# --------------------------------------------------------------------------
# stage 1


def pretrain_autoencoder(
    model: AlphaGAN,
    dataset: Sequence[VolumeSequence],
    cfg: TrainConfig,
    optimizers: dict[str, Adam] | None = None,
    start_step: int = 0,
    history: TrainHistory | None = None,
) -> tuple[AlphaGAN, TrainHistory]:
    """Train encoder and generator as an autoencoder on MSE, feeding each
    sequence's own label to the generator. D and C are not touched."""
    cfg.validate()
    x_all, y_all = stack_dataset(dataset, next(model.parameters()).dtype)
    opts = optimizers or make_optimizers(model, cfg, pretrain=True)
    history = history or TrainHistory(PRETRAIN_COLUMNS)
    total = _total_steps(len(x_all), cfg, cfg.pretrain_epochs, cfg.max_pretrain_steps)
    for step in range(start_step, total):
        t0 = time.perf_counter()
        idx = torch.from_numpy(batch_indices(len(x_all), cfg.batch_size, cfg.seed, step))
        x, y = x_all[idx], y_all[idx]
        recon = model.generator(model.encoder(x), y)
        mse = ((recon - x) ** 2).mean()
        opts["ae"].zero_grad()
        mse.backward()
        opts["ae"].step()
        mae = float((recon.detach() - x).abs().mean())
        _check_finite(model, step, {"mse": float(mse.detach()), "mae": mae})
        history.append(step=step, mse=float(mse.detach()), mae=mae, seconds=time.perf_counter() - t0)
    return model, history


# --------------------------------------------------------------------------
# stage 2


def gan_step(model: AlphaGAN, opts: dict[str, Adam], x, y, cfg: TrainConfig, step: int) -> dict:
    """One adversarial iteration: update E+G, then D, then C.

    One prior batch (and one set of random labels for the fake sequences) is
    drawn per iteration and shared by the three sub-steps.
    """
    E, G, D, C = model.encoder, model.generator, model.discriminator, model.code_discriminator
    B = x.shape[0]
    rng = np.random.default_rng([cfg.seed, 2, step])
    dtype = x.dtype
    z_rand = sample_prior(B, model.config.z_dim, rng, dtype)
    y_fake = torch.from_numpy(rng.integers(0, model.config.n_classes, B))

    z_real = E(x)
    x_recon = G(z_real, y)
    x_fake = G(z_rand, y_fake)
    mae = (x - x_recon).abs().mean()
    d_recon = D(x_recon)
    d_fake = D(x_fake)
    c_real = C(z_real)
    loss_eg = loss_encoder_generator(d_recon, d_fake, c_real, mae, cfg.lam)
    model.zero_grad(set_to_none=True)
    loss_eg.backward()
    opts["eg"].step()

    d_real = D(x)
    loss_d = loss_discriminator(d_real, D(x_recon.detach()), D(x_fake.detach()))
    model.zero_grad(set_to_none=True)
    loss_d.backward()
    opts["d"].step()

    loss_c = loss_code_discriminator(C(z_real.detach()), C(z_rand))
    model.zero_grad(set_to_none=True)
    loss_c.backward()
    opts["c"].step()
    model.zero_grad(set_to_none=True)

    return {
        "loss_eg": float(loss_eg.detach()),
        "loss_d": float(loss_d.detach()),
        "loss_c": float(loss_c.detach()),
        "mae": float(mae.detach()),
        "d_real": d_real.detach(),
        "d_recon": d_recon.detach(),
        "d_fake": d_fake.detach(),
    }


def train_alpha_gan(
    model: AlphaGAN,
    dataset: Sequence[VolumeSequence],
    cfg: TrainConfig,
    optimizers: dict[str, Adam] | None = None,
    start_step: int = 0,
    history: TrainHistory | None = None,
    checkpoint_dir=None,
    on_step=None,
    extra: dict | None = None,
) -> tuple[AlphaGAN, TrainHistory]:
    """Run adversarial training from ``start_step`` up to the configured total.

    Checkpoints ``ckpt_<step>`` go to ``checkpoint_dir`` every
    ``cfg.checkpoint_every`` steps and at the end of the run.
    """
    cfg.validate()
    x_all, y_all = stack_dataset(dataset, next(model.parameters()).dtype)
    opts = optimizers or make_optimizers(model, cfg)
    history = history or TrainHistory()
    total = _total_steps(len(x_all), cfg, cfg.gan_epochs, cfg.max_gan_steps)
    last_ckpt = None
    for step in range(start_step, total):
        t0 = time.perf_counter()
        idx = torch.from_numpy(batch_indices(len(x_all), cfg.batch_size, cfg.seed, step))
        out = gan_step(model, opts, x_all[idx], y_all[idx], cfg, step)
        losses = {k: out[k] for k in ("loss_eg", "loss_d", "loss_c", "mae")}
        _check_finite(model, step, losses, last_ckpt)
        history.append(step=step, **losses, seconds=time.perf_counter() - t0)
        if on_step is not None:
            on_step(step, out)
        done = step + 1
        if checkpoint_dir is not None and (
            (cfg.checkpoint_every and done % cfg.checkpoint_every == 0) or done == total
        ):
            last_ckpt = Path(checkpoint_dir) / f"ckpt_{done}"
            save_checkpoint(last_ckpt, model, opts, done, history, train_config=cfg, extra=extra)
    return model, history


# --------------------------------------------------------------------------
# synthesis


@torch.no_grad()
def synthesize_dataset(model: AlphaGAN, n_per_class: int, seed: int, batch: int = 8) -> list[VolumeSequence]:
    """Draw ``n_per_class`` sequences per class from the generator, ASD first."""
    model.eval()
    seqs = []
    for c, cls in enumerate(CLASSES):
        if n_per_class <= 0:
            continue
        z = sample_prior(n_per_class, model.config.z_dim, np.random.default_rng([seed, 3, c]))
        z = z.to(next(model.parameters()).dtype)
        labels = torch.full((n_per_class,), CLASS_INDEX[cls], dtype=torch.long)
        for start in range(0, n_per_class, batch):
            out = model.generator(z[start : start + batch], labels[start : start + batch])
            for i, vol in enumerate(out.float().numpy()):
                seqs.append(VolumeSequence(vol, f"synth-{cls}-{start + i:03d}", label=cls))
    model.train()
    return seqs


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: AlphaGAN
    optimizers: dict[str, Adam]
    step: int
    history: TrainHistory
    train_config: TrainConfig | None
    extra: dict


def _ckpt_paths(path):
    path = Path(path)
    if path.suffix in (".json", ".f32"):
        path = path.with_suffix("")
    return path.parent / (path.name + ".json"), path.parent / (path.name + ".f32")


def save_checkpoint(path, model: AlphaGAN, optimizers: dict[str, Adam], step: int, history=None, train_config=None, extra=None):
    """Header JSON (names, shapes, step, configs, history) plus one
    little-endian float32 payload holding every array back to back."""
    hdr_path, bin_path = _ckpt_paths(path)
    arrays = [(f"model.{k}", v) for k, v in model.state_dict().items()]
    opt_meta = {}
    for oname, opt in sorted(optimizers.items()):
        opt_meta[oname] = {"t": opt.t, "lr": opt.lr}
        for pname in opt.params:
            m, v = opt.state[pname]
            arrays.append((f"opt.{oname}.{pname}.m", m))
            arrays.append((f"opt.{oname}.{pname}.v", v))
    entries, chunks, offset = [], [], 0
    for name, t in arrays:
        a = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": int(step),
        "arch": model.config.to_dict(),
        "train_config": asdict(train_config) if train_config else None,
        "optimizers": opt_meta,
        "arrays": entries,
        "history": {"columns": list(history.columns), "records": history.records} if history else None,
        "extra": extra or {},
    }
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(b"".join(chunks))
    hdr_path.write_text(json.dumps(header) + "\n")
    return hdr_path


def load_checkpoint(path, model: AlphaGAN | None = None, cfg: TrainConfig | None = None) -> Checkpoint:
    hdr_path, bin_path = _ckpt_paths(path)
    try:
        header = json.loads(hdr_path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {hdr_path}: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{hdr_path}: unsupported checkpoint version {header.get('format_version')!r}")
    payload = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    if model is None:
        model = init_params(ArchConfig.from_dict(header["arch"]), 0)
    stored = {e["name"]: e for e in header["arrays"]}

    def fetch(name, like: torch.Tensor):
        entry = stored.get(name)
        if entry is None:
            raise ConfigError(f"checkpoint {hdr_path} has no array {name}")
        if tuple(entry["shape"]) != tuple(like.shape):
            raise ConfigError(
                f"checkpoint array {name} has shape {entry['shape']}, model expects {list(like.shape)}"
            )
        n = math.prod(entry["shape"])
        chunk = payload[entry["offset"] : entry["offset"] + n]
        if chunk.size != n:
            raise FormatError(f"{bin_path}: payload too short for {name}")
        return torch.from_numpy(chunk.reshape(entry["shape"]).copy()).to(like.dtype)

    state = model.state_dict()
    model_names = {f"model.{k}" for k in state}
    for e in header["arrays"]:
        if e["name"].startswith("model.") and e["name"] not in model_names:
            raise ConfigError(f"checkpoint array {e['name']} does not exist in the model")
    model.load_state_dict({k: fetch(f"model.{k}", v) for k, v in state.items()})

    tcfg = TrainConfig(**header["train_config"]) if header.get("train_config") else None
    run_cfg = cfg or tcfg or TrainConfig()
    optimizers = make_optimizers(model, run_cfg, pretrain="ae" in header["optimizers"])
    for oname, opt in optimizers.items():
        meta = header["optimizers"].get(oname)
        if meta is None:
            continue
        opt.t = int(meta["t"])
        for pname, p in opt.params.items():
            opt.state[pname] = (fetch(f"opt.{oname}.{pname}.m", p), fetch(f"opt.{oname}.{pname}.v", p))
    hist = header.get("history")
    history = TrainHistory(tuple(hist["columns"]), hist["records"]) if hist else TrainHistory()
    return Checkpoint(model, optimizers, int(header["step"]), history, tcfg, header.get("extra", {}))


def labels_of(indices) -> list[str]:
    return [INDEX_CLASS[int(i)] for i in indices]
