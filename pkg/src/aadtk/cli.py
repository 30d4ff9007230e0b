"""Command-line front end.

Every subcommand echoes its effective configuration to ``run_config.json``
in the output directory, so a run can be repeated exactly with
``aadtk rerun <that file>``. Errors are collected rather than raised at
first failure where the unit of work is a file; the process exits 0 only
when nothing went wrong.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import attribution as attr
from . import dsp
from . import plots
from . import synthetic as synth
from . import training as tr
from .data import (
    EEG_RATE_HZ,
    FeatureFileError,
    FeatureTensor,
    load_manifest,
    make_fold_splits,
    read_feature_file,
    save_manifest,
    write_feature_file,
)
from .model import ModelConfig, init_params, load_params, save_params
from .training import TrainConfig

log = logging.getLogger("aadtk")

DATASET_ROOT_ENV = "AADTK_DATASET_ROOT"
WINDOW_CHOICES = (1.0, 3.0, 5.0)

# attribution knobs live here; the other sections map onto config dataclasses
_ATTR_KEYS = {"n_draws", "chunk", "n_samples", "params_dir", "compare_csv"}


@dataclass
class RunConfig:
    """Everything a subcommand needs, in one reproducible record."""

    subcommand: str = ""
    dataset_root: str = ""
    out_dir: str = ""
    window_s: float = 5.0
    task: str = "aad"
    fold: Optional[int] = None  # None means the command's default fold(s)
    stream: str = "both"        # mmm only
    seed: int = 0
    jobs: int = 0               # 0 picks the logical core count
    features_dir: str = ""      # pca only: extractor outputs
    train_list: str = ""        # pca only: file naming the training features
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    attribution: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        return _build(ModelConfig, self.model, "model")

    def train_config(self) -> TrainConfig:
        merged = dict(self.train)
        merged.setdefault("seed", self.seed)
        return _build(TrainConfig, merged, "train")

    def synth_config(self) -> synth.SynthConfig:
        merged = dict(self.synth)
        merged.setdefault("seed", self.seed)
        return _build(synth.SynthConfig, merged, "synth")


def _build(cls, overrides: dict, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(
            f"unknown {section} config keys: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )
    return cls(**overrides)


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}; allowed: {sorted(allowed)}")


def load_run_config(path) -> RunConfig:
    """Parse a config JSON, rejecting any key the schema does not define."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    _check_keys(raw, top, "config")
    cfg = RunConfig(**raw)
    for section, cls in (("model", ModelConfig), ("train", TrainConfig),
                         ("synth", synth.SynthConfig)):
        _build(cls, dict(getattr(cfg, section)), section)  # validate only
    _check_keys(cfg.attribution, _ATTR_KEYS, "attribution config")
    return cfg


def _echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_config.json"
    path.write_text(json.dumps(dataclasses.asdict(cfg), indent=1, sort_keys=True))
    return path


def _dataset_root(cfg: RunConfig) -> Path:
    root = cfg.dataset_root or os.environ.get(DATASET_ROOT_ENV, "")
    if not root:
        raise ValueError(
            f"no dataset root: pass --dataset-root or set {DATASET_ROOT_ENV}"
        )
    return Path(root)


def _load_dataset(cfg: RunConfig):
    root = _dataset_root(cfg)
    return load_manifest(root / "manifest.json")


class ErrorLog:
    """Collected per-item failures, written as JSON next to the results."""

    def __init__(self):
        self.items: list = []

    def add(self, where: str, err: Exception | str) -> None:
        msg = str(err)
        self.items.append({"where": where, "error": msg})
        log.error("%s: %s", where, msg)

    def flush(self, out_dir) -> int:
        if self.items:
            Path(out_dir, "errors.json").write_text(json.dumps(self.items, indent=1))
        return 1 if self.items else 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: RunConfig) -> int:
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    scfg = cfg.synth_config()
    manifest = synth.generate(scfg, out / "dataset")
    checks = []
    for entry in manifest.entries[: min(8, len(manifest.entries))]:
        c = synth.closed_form_check(scfg, manifest, entry)
        checks.append({"subject": entry.subject_id, "session": entry.session_id,
                       "attended_r": c.attended_r, "unattended_r": c.unattended_r})
    report = {
        "n_recordings": len(manifest.entries),
        "n_subjects": len(manifest.subjects()),
        "total_hours": sum(e.duration_s for e in manifest.entries) / 3600.0,
        "coupling_checks": checks,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    with open(out / "summary.csv", "w", newline="") as f:
        f.write("subject,session,attended,duration_s\n")
        for e in manifest.entries:
            f.write(f"{e.subject_id},{e.session_id},{e.attended_index},{e.duration_s:g}\n")
    print(f"wrote {len(manifest.entries)} recordings to {out / 'dataset'}")
    return errors.flush(out)


# ---------------------------------------------------------------------------
# preprocess


def _content_hash(path: Path, extra: str = "") -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    h.update(extra.encode())
    return h.hexdigest()


def _preprocess_one(src: Path, dst: Path, fs_out: float) -> None:
    raw = read_feature_file(src)
    write_feature_file(dst, dsp.preprocess_eeg(raw, fs_out_hz=fs_out))


def _preprocess_entry(root: Path, out: Path, entry, cached_digest):
    """Returns (key, digest or None, error or None, skipped)."""
    key = entry.eeg_path
    try:
        src = root / entry.eeg_path
        dst = out / entry.eeg_path
        digest = _content_hash(src, extra=f"fs={EEG_RATE_HZ}")
        skipped = cached_digest == digest and dst.exists()
        if not skipped:
            dst.parent.mkdir(parents=True, exist_ok=True)
            _preprocess_one(src, dst, EEG_RATE_HZ)
        for sp in entry.stream_paths:
            # streams pass through untouched so the output dir is self-contained
            s_dst = out / sp
            if not s_dst.exists():
                s_dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(root / sp, s_dst)
        return key, digest, None, skipped
    except (FeatureFileError, OSError, ValueError) as e:
        return key, None, e, False


def cmd_preprocess(cfg: RunConfig) -> int:
    """EEG chain over every manifest entry, cached by input content hash."""
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    root = _dataset_root(cfg)
    manifest = load_manifest(root / "manifest.json")

    cache_path = out / ".preprocess_cache.json"
    cache = json.loads(cache_path.read_text()) if cache_path.exists() else {}
    jobs = cfg.jobs or os.cpu_count() or 1
    work = ((root, out, e, cache.get(e.eeg_path)) for e in manifest.entries)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: _preprocess_entry(*a), work))
    else:
        results = [_preprocess_entry(*a) for a in work]

    done, skipped = 0, 0
    for key, digest, err, was_cached in results:
        if err is not None:
            errors.add(key, err)
        elif was_cached:
            skipped += 1
        else:
            cache[key] = digest
            done += 1
    save_manifest(out / "manifest.json", dataclasses.replace(manifest, root=out))
    cache_path.write_text(json.dumps(cache, indent=1, sort_keys=True))
    report = {"processed": done, "skipped_up_to_date": skipped,
              "failed": len(errors.items)}
    (out / "report.json").write_text(json.dumps(report, indent=1))
    print(f"preprocessed {done}, skipped {skipped} up to date, {len(errors.items)} failed")
    return errors.flush(out)


# ---------------------------------------------------------------------------
# pca


def cmd_pca(cfg: RunConfig) -> int:
    """Fit on the training files' frames, transform every file to 64 dims."""
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    if not cfg.features_dir:
        errors.add("pca", "--features (or features_dir in the config) is required")
        return errors.flush(out)
    fdir = Path(cfg.features_dir)
    files = sorted(fdir.glob("*.ftf"))
    if not files:
        errors.add(str(fdir), "no .ftf feature files found")
        return errors.flush(out)
    if cfg.train_list:
        names = [ln.strip()
                 for ln in Path(cfg.train_list).read_text().splitlines() if ln.strip()]
        train_files = [fdir / n for n in names]
        missing = [str(p) for p in train_files if not p.exists()]
        if missing:
            errors.add(cfg.train_list, f"missing training features: {missing}")
            return errors.flush(out)
    else:
        train_files = files

    rows = []
    for p in train_files:
        t = read_feature_file(p)
        rows.append(t.data.T.astype(np.float64))  # frames as rows
    model = dsp.pca_fit(np.concatenate(rows, axis=0), k=64)
    dsp.save_pca(out / "pca_model", model)

    written = []
    for p in files:
        try:
            t = read_feature_file(p)
            z = dsp.pca_transform(model, t.data.T.astype(np.float64)).T
            zt = dsp.resample(
                FeatureTensor(z.astype(np.float32), t.sample_rate_hz, unit=t.unit,
                              source=f"pca64 of {p.name}"),
                EEG_RATE_HZ,
            )
            write_feature_file(out / p.name, zt)
            written.append((p.name, zt.data.shape[1]))
        except (FeatureFileError, ValueError, OSError) as e:
            errors.add(p.name, e)
    report = {
        "n_components": 64,
        "fit_files": [p.name for p in train_files],
        "explained_variance": model.explained_variance.tolist(),
        "transformed": len(written),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    with open(out / "summary.csv", "w", newline="") as f:
        f.write("file,frames\n")
        for name, frames in written:
            f.write(f"{name},{frames}\n")
    print(f"pca: fitted on {len(train_files)} files, transformed {len(written)}")
    return errors.flush(out)


# ---------------------------------------------------------------------------
# train / crossval / mmm


def _train_summary_csv(path, report: tr.TrainReport) -> None:
    with open(path, "w", newline="") as f:
        f.write("epoch,train_loss,val_loss,val_accuracy\n")
        for i in range(report.epochs_run()):
            f.write(f"{i + 1},{report.train_loss[i]:.6f},"
                    f"{report.val_loss[i]:.6f},{report.val_accuracy[i]:.6f}\n")


def cmd_train(cfg: RunConfig) -> int:
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    manifest = _load_dataset(cfg)
    tcfg = cfg.train_config()
    folds = make_fold_splits(manifest.subjects(), tcfg.seed)
    fold = folds[cfg.fold or 0]
    try:
        best, report = tr.run_fold(manifest, fold, cfg.window_s, cfg.task,
                                   tcfg, cfg.model_config())
    except tr.TrainingDiverged as e:
        errors.add(f"fold {fold.fold_index}", e)
        return errors.flush(out)
    save_params(out / "params", best)
    tr.save_report(out / "report.json", report)
    _train_summary_csv(out / "summary.csv", report)
    plots.plot_training_curves(report, out / "figures" / "training_curves.png",
                               title=f"{cfg.task}, fold {fold.fold_index}")
    print(f"fold {fold.fold_index}: test accuracy {report.test_accuracy:.4f} "
          f"({report.epochs_run()} epochs, best {report.best_epoch})")
    return errors.flush(out)


def cmd_crossval(cfg: RunConfig) -> int:
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    manifest = _load_dataset(cfg)
    report = tr.cross_validate(manifest, cfg.window_s, cfg.task,
                               cfg.train_config(), cfg.model_config(), out_dir=out)
    for fold_index, msg in report.failures:
        errors.add(f"fold {fold_index}", msg)
    payload = {
        "task": report.task,
        "window_s": report.window_s,
        "mean_accuracy": report.mean_accuracy,
        "sd_accuracy": report.sd_accuracy,
        "fold_accuracies": {r.fold_index: r.accuracy for r in report.fold_results},
        "failures": report.failures,
    }
    (out / "report.json").write_text(json.dumps(payload, indent=1))
    tr.write_crossval_csv(out / "summary.csv", [report])
    if report.fold_results:
        plots.plot_fold_accuracies(report, out / "figures" / "fold_accuracies.png")
    print(f"{report.task} @ {cfg.window_s:g} s: "
          f"mean accuracy {report.mean_accuracy:.4f} "
          f"± {report.sd_accuracy:.4f} over {len(report.fold_results)} folds")
    return errors.flush(out)


def cmd_mmm(cfg: RunConfig) -> int:
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    manifest = _load_dataset(cfg)
    streams = ("attended", "unattended") if cfg.stream == "both" else (cfg.stream,)
    folds = make_fold_splits(manifest.subjects(), cfg.seed)
    fold = folds[cfg.fold or 0]
    rows = []
    for stream in streams:
        try:
            best, report = tr.train_mmm(manifest, cfg.window_s, stream,
                                        cfg.train_config(), cfg.model_config(), fold)
        except (tr.TrainingDiverged, ValueError) as e:
            errors.add(stream, e)
            continue
        sub = out / f"mmm_{stream}"
        save_params(sub / "params", best)
        tr.save_report(sub / "report.json", report)
        plots.plot_training_curves(report, out / "figures" / f"curves_{stream}.png",
                                   title=f"match-mismatch, {stream} stream")
        rows.append((stream, report.test_accuracy))
        print(f"mmm {stream}: test accuracy {report.test_accuracy:.4f}")
    with open(out / "summary.csv", "w", newline="") as f:
        f.write("stream,test_accuracy\n")
        for stream, acc in rows:
            f.write(f"{stream},{acc:.6f}\n")
    (out / "report.json").write_text(json.dumps(
        {"window_s": cfg.window_s, "fold": fold.fold_index,
         "accuracies": {s: a for s, a in rows}}, indent=1))
    return errors.flush(out)


# ---------------------------------------------------------------------------
# attribute


def cmd_attribute(cfg: RunConfig) -> int:
    errors = ErrorLog()
    _echo_config(cfg)
    out = Path(cfg.out_dir)
    manifest = _load_dataset(cfg)
    acfg = dict(cfg.attribution)
    _check_keys(acfg, _ATTR_KEYS, "attribution config")
    params_dir = acfg.get("params_dir", "")
    if not params_dir:
        errors.add("attribute", "attribution.params_dir is required (a trained model)")
        return errors.flush(out)
    params = load_params(params_dir)

    folds = make_fold_splits(manifest.subjects(), cfg.seed)
    fold = folds[cfg.fold or 0]
    test_samples = tr._build_samples(manifest, fold.test_subjects,
                                     cfg.window_s, "aad", cfg.seed)
    pool_samples = tr._build_samples(manifest, fold.train_subjects,
                                     cfg.window_s, "aad", cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    pool = [pool_samples[i].eeg.data
            for i in rng.choice(len(pool_samples), size=min(64, len(pool_samples)),
                                replace=False)]
    n_samples = int(acfg.get("n_samples", 16))
    n_draws = int(acfg.get("n_draws", 64))
    chunk = int(acfg.get("chunk", 64))
    picked = [test_samples[i]
              for i in rng.choice(len(test_samples),
                                  size=min(n_samples, len(test_samples)), replace=False)]
    maps = [attr.expected_gradients(params, s, pool, n_draws=n_draws,
                                    seed=cfg.seed, chunk=chunk) for s in picked]
    amap = attr.channel_importance(maps, task=cfg.task)
    attr.save_importance_csv(out / "importance.csv", amap)
    attr.save_importance_ftf(out / "importance.ftf", amap)
    plots.plot_channel_importance(amap, out / "figures" / "channel_importance.png")

    compare_csv = acfg.get("compare_csv", "")
    if compare_csv:
        other_names, other_vals = _read_importance_csv(compare_csv)
        if list(other_names) != list(amap.channel_names):
            errors.add(compare_csv, "channel names disagree with this run")
        else:
            diff = amap.per_channel - other_vals
            attr.save_difference_csv(out / "difference.csv", amap.channel_names, diff)
            plots.plot_difference_map(amap.channel_names, diff,
                                      out / "figures" / "difference_map.png",
                                      labels=("this run", Path(compare_csv).stem))

    report = {
        "n_samples": len(picked),
        "n_draws": n_draws,
        "params_dir": str(params_dir),
        "top_channels": [amap.channel_names[i]
                         for i in np.argsort(amap.per_channel)[::-1][:5]],
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    print(f"attributed {len(picked)} samples; top channels: {report['top_channels']}")
    return errors.flush(out)


def _read_importance_csv(path):
    names, vals = [], []
    for ln in Path(path).read_text().splitlines()[1:]:
        if not ln.strip():
            continue
        name, v = ln.rsplit(",", 1)
        names.append(name)
        vals.append(float(v))
    return names, np.asarray(vals)


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(cfg: RunConfig, target: str) -> int:
    """Print a feature file header or manifest overview as JSON."""
    p = Path(target)
    if p.name == "manifest.json" or p.is_dir():
        manifest = load_manifest(p if p.name == "manifest.json" else p / "manifest.json")
        info = {
            "n_recordings": len(manifest.entries),
            "subjects": manifest.subjects(),
            "total_hours": sum(e.duration_s for e in manifest.entries) / 3600.0,
        }
    else:
        t = read_feature_file(p)
        info = {
            "shape": list(t.data.shape),
            "sample_rate_hz": t.sample_rate_hz,
            "unit": t.unit,
            "source": t.source,
            "finite": bool(np.isfinite(t.data).all()),
        }
    print(json.dumps(info, indent=1))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset-root", default="",
                   help=f"dataset directory (or ${DATASET_ROOT_ENV})")
    p.add_argument("--out", default="", help="output directory")
    p.add_argument("--window", type=float, choices=WINDOW_CHOICES, default=None,
                   help="decision window length in seconds")
    p.add_argument("--task", choices=tr.TASKS, default=None)
    p.add_argument("--fold", type=int, default=None, help="fold index, 0..6")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: logical cores)")
    p.add_argument("--config", default="", help="JSON config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="aadtk",
        description="EEG auditory attention decoding: data, training, reports.",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    for name, doc in (
        ("synth", "generate the synthetic coupled dataset"),
        ("preprocess", "bandpass, re-reference and resample raw EEG"),
        ("train", "train one fold"),
        ("crossval", "subject-wise 7-fold cross-validation"),
        ("mmm", "match-mismatch control models"),
        ("attribute", "channel attribution of a trained model"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "mmm":
            p.add_argument("--stream", choices=("attended", "unattended", "both"),
                           default="both")
        if name == "attribute":
            p.add_argument("--params", default="", help="trained model directory")
            p.add_argument("--compare", default="",
                           help="importance.csv from another run to diff against")

    p = sub.add_parser("pca", help="fit PCA on train features, write 64-dim files")
    _add_common(p)
    p.add_argument("--features", default="", help="directory of extractor outputs")
    p.add_argument("--train-list", default="",
                   help="file naming the training features, one per line")

    p = sub.add_parser("inspect", help="show a feature file header or manifest")
    p.add_argument("target", help="feature file, manifest.json or dataset dir")

    p = sub.add_parser("rerun", help="repeat a run from its echoed run_config.json")
    p.add_argument("config_file")
    p.add_argument("--out", default="", help="override the output directory")
    return ap


def _merge_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", "") else RunConfig()
    cfg.subcommand = args.subcommand
    if args.dataset_root:
        cfg.dataset_root = args.dataset_root
    if args.out:
        cfg.out_dir = args.out
    if args.window is not None:
        cfg.window_s = args.window
    if getattr(args, "task", None):
        cfg.task = args.task
    if args.fold is not None:
        cfg.fold = args.fold
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if getattr(args, "stream", None):
        cfg.stream = args.stream
    if getattr(args, "params", ""):
        cfg.attribution["params_dir"] = args.params
    if getattr(args, "compare", ""):
        cfg.attribution["compare_csv"] = args.compare
    if getattr(args, "features", ""):
        cfg.features_dir = args.features
    if getattr(args, "train_list", ""):
        cfg.train_list = args.train_list
    if not cfg.out_dir:
        cfg.out_dir = f"out_{cfg.subcommand}"
    return cfg


def main(argv: Optional[list] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)

    try:
        if args.subcommand == "inspect":
            return cmd_inspect(RunConfig(subcommand="inspect"), args.target)
        if args.subcommand == "rerun":
            cfg = load_run_config(args.config_file)
            if args.out:
                cfg.out_dir = args.out
        else:
            cfg = _merge_args(args)
    except (ValueError, TypeError, FeatureFileError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return _dispatch(cfg)


def _dispatch(cfg: RunConfig) -> int:
    handlers = {
        "synth": cmd_synth,
        "preprocess": cmd_preprocess,
        "pca": cmd_pca,
        "train": cmd_train,
        "crossval": cmd_crossval,
        "mmm": cmd_mmm,
        "attribute": cmd_attribute,
    }
    try:
        return handlers[cfg.subcommand](cfg)
    except (ValueError, FeatureFileError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
