"""Independent reference implementations and small fixtures shared by tests."""

from __future__ import annotations

import numpy as np
import torch

from fmrigan.nets import ArchConfig, init_params
from fmrigan.seqvol import ASD, BIO, HC, SCRAM, PhantomSpec, RoiSpec
from fmrigan.training import sample_prior

LOG_EPS = 1e-7


def tiny_arch(kind: str, **overrides) -> ArchConfig:
    """T=4, 8^3 grid, z_dim=8: small enough for finite differences."""
    base = dict(
        dims=(4, 8, 8, 8),
        encoder_conv=[(4, 2, 2), (4, 2, 2), (2, 2, 4)],
        disc_conv=[(4, 2, 2), (4, 2, 2), (2, 2, 4)],
        z_dim=8,
        temporal_kind=kind,
        disc_mlp=(8,),
        code_mlp=(8,),
    )
    base.update(overrides)
    return ArchConfig(**base)


def _log(p):
    return torch.log(p.clamp(LOG_EPS, 1 - LOG_EPS))


def reference_losses(model, x, y, z_rand, y_fake, lam=10.0):
    """The three adversarial objectives written out directly from their definitions."""
    E, G, D, C = model.encoder, model.generator, model.discriminator, model.code_discriminator
    z = E(x)
    x_recon = G(z, y)
    x_fake = G(z_rand, y_fake)
    mae = (x - x_recon).abs().mean()
    loss_eg = lam * mae - _log(D(x_recon)).mean() - _log(D(x_fake)).mean() - _log(1 - C(z)).mean()
    loss_d = -_log(D(x)).mean() - _log(1 - D(x_recon)).mean() - _log(1 - D(x_fake)).mean()
    loss_c = -_log(C(z)).mean() - _log(1 - C(z_rand)).mean()
    return {"eg": loss_eg, "d": loss_d, "c": loss_c}


GROUP_LOSS = {"encoder": "eg", "generator": "eg", "discriminator": "d", "code_discriminator": "c"}


def finite_difference_check(kind: str, seed: int = 0, per_tensor: int = 3, h: float = 1e-6):
    """Relative error ||a - n|| / max(||a||, ||n||) between autograd gradients
    ``a`` and central differences ``n`` over a sample of entries of every
    parameter tensor, one value per component."""
    model = init_params(tiny_arch(kind), seed, dtype=torch.float64)
    rng = np.random.default_rng(seed)
    # zero biases put some pre-activations exactly on the leaky-relu kink,
    # where one-sided and central differences disagree
    with torch.no_grad():
        for p in model.parameters():
            if p.ndim == 1:
                p.copy_(torch.from_numpy(rng.uniform(-0.1, 0.1, p.shape)))
    x = torch.from_numpy(rng.uniform(-1, 1, (2,) + model.config.dims))
    y = torch.tensor([0, 1])
    z_rand = sample_prior(2, model.config.z_dim, rng, torch.float64)
    y_fake = torch.tensor([1, 0])

    def loss_of(key):
        with torch.no_grad():
            return float(reference_losses(model, x, y, z_rand, y_fake)[key])

    errors = {}
    for group, key in GROUP_LOSS.items():
        module = model.group(group)
        model.zero_grad(set_to_none=True)
        reference_losses(model, x, y, z_rand, y_fake)[key].backward()
        analytic, numeric = [], []
        for p in module.parameters():
            grad = p.grad.reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
            flat = p.data.view(-1)
            for i in rng.choice(p.numel(), size=min(per_tensor, p.numel()), replace=False):
                orig = float(flat[i])
                flat[i] = orig + h
                up = loss_of(key)
                flat[i] = orig - h
                down = loss_of(key)
                flat[i] = orig
                analytic.append(float(grad[i]))
                numeric.append((up - down) / (2 * h))
        a, n = np.array(analytic), np.array(numeric)
        errors[group] = float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-300))
    return errors


def reference_ttest(a, b):
    """Pooled two-sample t statistic and two-tailed p from scipy."""
    from scipy import stats

    res = stats.ttest_ind(a, b, equal_var=True)
    return float(res.statistic), float(res.pvalue)


def trapezoid_auc(labels, scores) -> float:
    """Area under the empirical ROC curve via the trapezoid rule."""
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=np.float64)
    thresholds = np.concatenate([[np.inf], np.unique(s)[::-1]])
    P, N = y.sum(), (1 - y).sum()
    tpr = np.array([((s >= t) & (y == 1)).sum() / P for t in thresholds])
    fpr = np.array([((s >= t) & (y == 0)).sum() / N for t in thresholds])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))


def knn_purity(coords, labels, k=3) -> float:
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    d = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn_idx = np.argsort(d, axis=1)[:, :k]
    return float(np.mean(labels[nn_idx] == labels[:, None]))


def contrast_phantom(n_per_class=8, noise=0.1, seed=0, dims=(24, 16, 16, 16), fwhm=2.0) -> PhantomSpec:
    """BIO-active ROI, SCRAM-active ROI and a zero-amplitude ROI, with class-dependent amplitudes."""
    rois = [
        RoiSpec("bio_roi", (4, 4, 8), 3, BIO, {ASD: 1.0, HC: 0.5}),
        RoiSpec("scram_roi", (11, 11, 8), 3, SCRAM, {ASD: 0.5, HC: 1.0}),
        RoiSpec("null_roi", (4, 11, 8), 2, BIO, {ASD: 0.0, HC: 0.0}),
    ]
    return PhantomSpec(
        dims=dims,
        n_subjects_per_class=n_per_class,
        rois=rois,
        noise_sigma=noise,
        spatial_smooth_fwhm=fwhm,
        block_len_frames=4,
        seed=seed,
    )
