"""Command-line front end: ``fmrigan <subcommand> --config cfg.json --out DIR``.

Every run resolves one RunConfig (file + profile defaults + ``--set``
overrides + flags), writes all outputs under ``--out`` and finishes with a
``manifest.json`` holding that config, the seeds and a sha256 of every
artifact. Passing a manifest back as ``--config`` reruns the same command.

Exit codes: 0 success, 2 configuration or validation error (including missing
inputs), 1 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import ARM_NAMES, RunConfig, read_config_file, resolve_config
from .errors import ConfigError, FormatError, TrainingDiverged, ValidationError
from .eval.contrast import bio_scram_ttest
from .eval.experiment import GAUSSIAN_ARM, NONE_ARM, augmentation_experiment
from .eval.projection import project_sequences
from .eval.report import (
    read_classifier_csv,
    read_contrast_csv,
    write_classifier_csv,
    write_contrast_csv,
    write_projection_csv,
    write_projection_svg,
    write_variance_csv,
)
from .nets import init_params
from .seqvol import (
    NormParams,
    apply_normalizer,
    fit_normalizer,
    make_phantom,
    read_dataset,
    read_parcellation,
    read_schedule,
    split_dataset,
    write_dataset,
    write_parcellation,
    write_schedule,
)
from .training import (
    load_checkpoint,
    make_optimizers,
    pretrain_autoencoder,
    save_checkpoint,
    synthesize_dataset,
    train_alpha_gan,
)

log = logging.getLogger("fmrigan")

MANIFEST_VERSION = 1
LOCK_NAME = ".lock"
COMMANDS = ("phantom", "split", "pretrain", "train", "generate", "eval-roi", "eval-embed", "eval-clf", "report", "version")


class MissingInput(ConfigError):
    """A path named by the config or a flag does not exist."""


# --------------------------------------------------------------------------
# run context


class Run:
    """State shared by one subcommand invocation."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, argv):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.argv = list(argv)
        self.inputs: dict[str, str] = {}
        self.notes: dict = {}

    def input_path(self, key: str, value: str | None, kind: str = "any") -> Path:
        if value is None:
            raise ConfigError(f"paths.{key} is required for '{self.command}' (flag --{key})")
        p = Path(value)
        ok = p.is_dir() if kind == "dir" else p.exists() or _ckpt_exists(p)
        if not ok:
            raise MissingInput(f"input not found: {p} (paths.{key})")
        self.inputs[key] = str(p)
        return p

    def seeds(self) -> dict:
        return {"seed": self.cfg.seed, "phantom.seed": self.cfg.phantom.seed, "train.seed": self.cfg.train.seed}


def _ckpt_exists(p: Path) -> bool:
    return p.with_name(p.name + ".json").is_file()


@contextlib.contextmanager
def locked(out: Path):
    """Exclusive lockfile in the output directory for the lifetime of a run."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {out} is locked by another run (delete {lock} if stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield lock
    finally:
        lock.unlink(missing_ok=True)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run: Run) -> Path:
    artifacts = {}
    for p in sorted(run.out.rglob("*")):
        if p.is_file() and p.name not in ("manifest.json", LOCK_NAME):
            artifacts[p.relative_to(run.out).as_posix()] = sha256_file(p)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "fmrigan",
        "version": __version__,
        "command": run.command,
        "argv": run.argv,
        "config": run.cfg.to_dict(),
        "seeds": run.seeds(),
        "inputs": run.inputs,
        "notes": run.notes,
        "artifacts": artifacts,
    }
    path = run.out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# input helpers


def _dataset_dir(root: Path) -> Path:
    for sub in ("data", "synthetic"):
        if (root / sub).is_dir():
            return root / sub
    return root


def load_sequences(root: Path):
    seqs = read_dataset(_dataset_dir(root))
    if not seqs:
        raise MissingInput(f"no .vseq sequences found under {root}")
    return seqs


def load_design(run: Run, root: Path):
    sched, parc = root / "schedule.txt", root / "parcellation.json"
    for p in (sched, parc):
        if not p.is_file():
            raise MissingInput(f"input not found: {p} (schedule and parcellation are read from paths.data)")
    return read_schedule(sched), read_parcellation(parc)


def load_split(path: Path) -> tuple[dict, NormParams]:
    try:
        doc = json.loads(path.read_text())
        norm = NormParams(float(doc["normalization"]["offset"]), float(doc["normalization"]["scale"]))
        ids = {k: list(doc[k]) for k in ("train_ids", "val_ids", "test_ids")}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a split file ({exc})") from exc
    return ids, norm


def split_sets(run: Run):
    """Normalized train/val/test sequences from paths.data and paths.split."""
    seqs = load_sequences(run.input_path("data", run.cfg.paths.data, "dir"))
    ids, norm = load_split(run.input_path("split", run.cfg.paths.split))
    by_id = {s.subject_id: s for s in seqs}
    missing = [i for part in ids.values() for i in part if i not in by_id]
    if missing:
        raise ValidationError(f"split names subjects absent from the data: {missing[:5]}")
    sets = tuple([apply_normalizer(by_id[i], norm) for i in ids[k]] for k in ("train_ids", "val_ids", "test_ids"))
    return sets, norm


def _check_dims(cfg: RunConfig, seqs, where: str):
    dims = tuple(seqs[0].dims)
    if dims != tuple(cfg.arch.dims):
        raise ConfigError(f"{where} has dims {list(dims)} but arch.dims is {list(cfg.arch.dims)}")


# --------------------------------------------------------------------------
# subcommands


def cmd_phantom(run: Run):
    seqs, schedule, parc = make_phantom(run.cfg.phantom)
    write_dataset(seqs, run.out / "data")
    write_schedule(schedule, run.out / "schedule.txt")
    write_parcellation(parc, run.out / "parcellation.json")
    log.info("wrote %d sequences to %s", len(seqs), run.out / "data")


def cmd_split(run: Run):
    seqs = load_sequences(run.input_path("data", run.cfg.paths.data, "dir"))
    sizes = list(run.cfg.split.sizes) if run.cfg.split.sizes else None
    split = split_dataset([s.subject_id for s in seqs], run.cfg.split.ratios, run.cfg.seed, sizes)
    train = set(split.train_ids)
    norm = fit_normalizer([s for s in seqs if s.subject_id in train])
    doc = {
        "seed": split.seed,
        "train_ids": split.train_ids,
        "val_ids": split.val_ids,
        "test_ids": split.test_ids,
        "normalization": {"offset": norm.offset, "scale": norm.scale, "fitted_on": "train"},
    }
    (run.out / "split.json").write_text(json.dumps(doc, indent=2) + "\n")
    log.info("split %d/%d/%d", len(split.train_ids), len(split.val_ids), len(split.test_ids))


def cmd_pretrain(run: Run):
    (train, _, _), norm = split_sets(run)
    _check_dims(run.cfg, train, "training data")
    model = init_params(run.cfg.arch, run.cfg.train.seed)
    opts = make_optimizers(model, run.cfg.train, pretrain=True)
    model, history = pretrain_autoencoder(model, train, run.cfg.train, opts)
    extra = {"normalization": {"offset": norm.offset, "scale": norm.scale}, "stage": "pretrain"}
    save_checkpoint(run.out / "ckpt_pretrain", model, opts, len(history), history, run.cfg.train, extra)
    history.to_csv(run.out / "history_pretrain.csv")
    if len(history):
        log.info("pretrain mse %.4g -> %.4g over %d steps", history.records[0]["mse"], history.records[-1]["mse"], len(history))


def cmd_train(run: Run):
    (train, _, _), norm = split_sets(run)
    _check_dims(run.cfg, train, "training data")
    tcfg = run.cfg.train
    model = init_params(run.cfg.arch, tcfg.seed)
    start, history, opts = 0, None, None
    if run.cfg.paths.resume:
        ckpt = load_checkpoint(run.input_path("resume", run.cfg.paths.resume), model, tcfg)
        if ckpt.extra.get("stage") == "pretrain":
            raise ConfigError(f"{run.cfg.paths.resume} is a pretraining checkpoint; pass it as --init")
        start, history, opts = ckpt.step, ckpt.history, ckpt.optimizers
        run.notes["resumed_from_step"] = start
    elif run.cfg.paths.init:
        load_checkpoint(run.input_path("init", run.cfg.paths.init), model, tcfg)
    else:
        log.warning("no --init checkpoint: adversarial training starts from random weights")
    extra = {"normalization": {"offset": norm.offset, "scale": norm.scale}, "stage": "gan"}
    model, history = train_alpha_gan(model, train, tcfg, opts, start, history, checkpoint_dir=run.out, extra=extra)
    history.to_csv(run.out / "history.csv")
    run.notes["final_step"] = len(history)


def _load_generator(run: Run, key: str, value: str | None):
    ckpt = load_checkpoint(run.input_path(key, value))
    if ckpt.extra.get("stage") == "pretrain":
        log.warning("%s is a pretraining checkpoint; its generator was never trained adversarially", value)
    return ckpt.model


def cmd_generate(run: Run):
    model = _load_generator(run, "checkpoint", run.cfg.paths.checkpoint)
    seqs = synthesize_dataset(model, run.cfg.eval.n_synth_per_class, run.cfg.seed)
    write_dataset(seqs, run.out / "synthetic")
    log.info("wrote %d synthetic sequences", len(seqs))


def cmd_eval_roi(run: Run):
    root = run.input_path("data", run.cfg.paths.data, "dir")
    schedule, parc = load_design(run, root)
    ev = run.cfg.eval
    sources = [("real", load_sequences(root))]
    if run.cfg.paths.synthetic:
        sources.append(("synthetic", load_sequences(run.input_path("synthetic", run.cfg.paths.synthetic, "dir"))))
    for name, seqs in sources:
        rows = bio_scram_ttest(seqs, schedule, parc, ev.regions, welch=ev.welch, level=ev.level)
        write_contrast_csv(run.out / f"contrast_{name}.csv", rows)


def cmd_eval_embed(run: Run):
    root = run.input_path("data", run.cfg.paths.data, "dir")
    real = load_sequences(root)
    if run.cfg.paths.split:
        _, norm = load_split(run.input_path("split", run.cfg.paths.split))
    else:
        norm = fit_normalizer(real)
    real = [apply_normalizer(s, norm) for s in real]
    synth = []
    if run.cfg.paths.synthetic:
        synth = load_sequences(run.input_path("synthetic", run.cfg.paths.synthetic, "dir"))
    ev = run.cfg.eval
    res = project_sequences(real, synth, ev.pca_dims, ev.perplexity, ev.tsne_iter, run.cfg.seed)
    write_projection_csv(run.out / "projection.csv", res)
    write_variance_csv(run.out / "pca_variance.csv", res.explained_variance_ratio)
    write_projection_svg(run.out / "projection.svg", res, ev.svg_axes, title=f"t-SNE of {len(real)} real + {len(synth)} synthetic")
    run.notes["tsne"] = res.tsne_params
    run.notes["pca_components"] = int(len(res.explained_variance_ratio))


def cmd_eval_clf(run: Run):
    (train, val, test), _ = split_sets(run)
    ev = run.cfg.eval
    arms = {}
    for name in ev.arms:
        if name == NONE_ARM:
            arms[name] = None
        elif name == GAUSSIAN_ARM:
            arms[name] = GAUSSIAN_ARM
        elif name in run.cfg.paths.generators:
            arms[name] = _load_generator(run, f"generators.{name}", run.cfg.paths.generators[name])
        else:
            log.warning("arm %s has no generator checkpoint (paths.generators.%s); skipping", name, name)
    target = ev.target_size if ev.target_size is not None else 3 * len(train)
    run.notes["target_size"] = target
    reports = augmentation_experiment(train, val, test, arms, target, ev.classifier, run.cfg.seed, ev.gaussian_sigma)
    write_classifier_csv(run.out / "classifier.csv", reports)


def _md_table(header, rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(rows_i) + " |" for rows_i in rows]
    return lines


def _f(v, digits=3):
    if v is None:
        return "-"
    return f"{v:.{digits}g}" if isinstance(v, float) else str(v)


def cmd_report(run: Run):
    if not run.cfg.paths.inputs:
        raise ConfigError("paths.inputs is required for 'report' (flag --inputs)")
    lines = ["# Evaluation report", ""]
    for i, value in enumerate(run.cfg.paths.inputs):
        root = run.input_path(f"inputs[{i}]", value, "dir")
        for p in sorted(root.glob("contrast_*.csv")):
            lines += [f"## ROI contrast: {p.stem.removeprefix('contrast_')} ({root.name})", ""]
            rows = [
                [r.region, _f(r.mean_z_bio), _f(r.mean_z_scram), _f(r.t_statistic), _f(r.p_value)]
                for r in read_contrast_csv(p)
            ]
            lines += _md_table(["region", "mean z BIO", "mean z SCRAM", "t", "p"], rows) + [""]
        p = root / "classifier.csv"
        if p.is_file():
            lines += [f"## Downstream classification ({root.name})", ""]
            rows = [
                [r.method, _f(r.ce_loss), _f(r.accuracy), _f(r.f1), _f(r.auc), str(r.n_train), str(r.n_test)]
                for r in read_classifier_csv(p)
            ]
            lines += _md_table(["method", "CE loss", "accuracy", "F1", "AUC", "n train", "n test"], rows) + [""]
        p = root / "projection.svg"
        if p.is_file():
            lines += [f"## Projection ({root.name})", "", f"![projection]({p.resolve().as_posix()})", ""]
    (run.out / "report.md").write_text("\n".join(lines).rstrip() + "\n")


HANDLERS = {
    "phantom": cmd_phantom,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval-roi": cmd_eval_roi,
    "eval-embed": cmd_eval_embed,
    "eval-clf": cmd_eval_clf,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# argument parsing

# input flags fold into the paths section of the config
_PATH_FLAGS = {
    "data": "input data directory (phantom run or directory of .vseq files)",
    "split": "split.json written by the split subcommand",
    "init": "pretraining checkpoint used to initialize adversarial training",
    "resume": "adversarial checkpoint to resume; history and step numbering continue",
    "checkpoint": "trained checkpoint to sample from",
    "synthetic": "directory of synthetic sequences (output of generate)",
}
_COMMAND_FLAGS = {
    "phantom": [],
    "split": ["data"],
    "pretrain": ["data", "split"],
    "train": ["data", "split", "init", "resume"],
    "generate": ["checkpoint"],
    "eval-roi": ["data", "synthetic"],
    "eval-embed": ["data", "split", "synthetic"],
    "eval-clf": ["data", "split"],
    "report": [],
}
_HELP = {
    "phantom": "generate a ground-truth phantom dataset",
    "split": "split subjects into train/val/test and fit normalization on train",
    "pretrain": "pretrain encoder and generator as an autoencoder",
    "train": "adversarial alpha-GAN training",
    "generate": "sample labeled synthetic sequences from a checkpoint",
    "eval-roi": "ROI BIO vs SCRAM contrast statistics",
    "eval-embed": "PCA + t-SNE projection of real and synthetic sequences",
    "eval-clf": "downstream augmentation classification experiment",
    "report": "collect evaluation CSVs into a markdown report",
    "version": "print the package version",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmrigan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        if name == "version":
            continue
        p.add_argument("--config", help="run config JSON or a previous manifest.json (default: profile defaults)")
        p.add_argument("--out", help="output directory (overrides paths.out)")
        p.add_argument("--profile", choices=("desk", "paper"), help="defaults profile (overrides config profile)")
        p.add_argument("--seed", type=int, help="global seed (overrides config seed)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. --set train.lr_eg=1e-4 (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        for flag in _COMMAND_FLAGS[name]:
            p.add_argument(f"--{flag}", help=_PATH_FLAGS[flag])
        if name == "eval-clf":
            p.add_argument("--arms", help=f"comma-separated arms from {','.join(ARM_NAMES)}")
            p.add_argument("--generator", action="append", default=[], metavar="KIND=CKPT",
                           help="generator checkpoint for a temporal-kind arm (repeatable)")
        if name == "report":
            p.add_argument("--inputs", nargs="+", help="run directories whose CSVs are collected")
    return parser


def config_from_args(args) -> RunConfig:
    raw = read_config_file(args.config) if args.config else {}
    overrides = list(args.overrides)
    for flag in _COMMAND_FLAGS[args.command]:
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"paths.{flag}={json.dumps(str(Path(value).resolve()))}")
    if getattr(args, "arms", None):
        overrides.append(f"eval.arms={json.dumps([a.strip() for a in args.arms.split(',') if a.strip()])}")
    for item in getattr(args, "generator", []) or []:
        kind, sep, path = item.partition("=")
        if not sep or not kind or not path:
            raise ConfigError(f"--generator {item!r} must look like KIND=CKPT")
        overrides.append(f"paths.generators.{kind}={json.dumps(str(Path(path).resolve()))}")
    if getattr(args, "inputs", None):
        overrides.append(f"paths.inputs={json.dumps([str(Path(p).resolve()) for p in args.inputs])}")
    if args.out:
        overrides.append(f"paths.out={json.dumps(str(Path(args.out).resolve()))}")
    cfg = resolve_config(raw, overrides, args.profile, args.seed)
    unknown = sorted(set(cfg.paths.generators) - set(ARM_NAMES[2:]))
    if unknown:
        raise ConfigError(f"paths.generators: unknown temporal kind {unknown[0]!r}")
    return cfg


def _setup_logging(verbose: bool):
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "version":
        print(f"fmrigan {__version__}")
        return 0
    _setup_logging(args.verbose)
    try:
        cfg = config_from_args(args)
        if not cfg.paths.out:
            raise ConfigError("an output directory is required (--out or paths.out)")
        out = Path(cfg.paths.out)
        run = Run(args.command, cfg, out, argv)
        with locked(out):
            # echo the normalized config before doing any work
            (out / "config.json").write_text(cfg.to_json())
            t0 = time.perf_counter()
            HANDLERS[args.command](run)
            write_manifest(run)
        log.info("%s finished in %.1fs; outputs in %s", args.command, time.perf_counter() - t0, out)
        return 0
    except (ConfigError, ValidationError, FormatError) as exc:
        log.error("%s", exc)
        return 2
    except TrainingDiverged as exc:
        log.error("training diverged at step %s: %s", exc.step, exc)
        return 1
    except Exception as exc:  # runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
