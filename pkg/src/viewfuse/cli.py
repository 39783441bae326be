"""Command-line entry point.

Subcommands: synth, train, eval, ablate, audit, gradcheck. Exit codes:
0 success, 1 validation error (bad flags, config, manifest, checkpoint),
2 runtime failure (numerical breakdown, a failed check, anything
unexpected).

Model and training settings live in a JSON config; flags cover only
paths, sweeps, and seeds. Output files are deterministic for a given
config and seed: floats are serialized with repr via the json module,
nothing writes timestamps or hostnames, and every output JSON embeds
the hash of the config that produced it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .adapters import apply_freeze_policy
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    audit_preset,
    config_hash,
    config_to_dict,
    load_run_config,
    run_config_from_dict,
)
from .datasets import SyntheticSpec, generate_synthetic, load_cases
from .metrics import bootstrap_ci, pr_auc, pr_curve, roc_auc, roc_curve
from .model import VisionTextModel
from .tensor import NonFiniteError
from .text import Vocabulary, canonical_prompts, encode_prompt_pair
from .training import (
    LoadedCase,
    NormStats,
    cross_validate,
    evaluate,
    fit,
    fold_seed,
    stratified_holdout,
)
from .vision import VIEW_ORDER

VALIDATION_ERROR = 1
RUNTIME_FAILURE = 2

BOOTSTRAP_RESAMPLES = 2000

SWEEPS = ("local_global", "views", "adapters")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    raw = config_to_dict(cfg)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "out", None):
        raw["out_dir"] = str(args.out)
    if getattr(args, "manifest", None):
        raw["data"]["manifest"] = str(args.manifest)
    return run_config_from_dict(raw)


def _prepare(cfg: RunConfig):
    if not cfg.data.manifest:
        raise ConfigError("no manifest given (set data.manifest or pass --manifest)")
    cases = load_cases(cfg.data.manifest, cfg.model.vision.image_size, cfg.data.downsample)
    if cfg.model.vision.views != VIEW_ORDER:
        cases = _subset_views(cases, cfg.model.vision.views)
    vocab = Vocabulary.build(canonical_prompts().all())
    if len(vocab) > cfg.model.text.vocab_size:
        raise ConfigError(
            f"model vocab_size {cfg.model.text.vocab_size} is smaller than the "
            f"prompt vocabulary ({len(vocab)} tokens)"
        )
    prompt_ids = encode_prompt_pair(vocab, cfg.model.text.context_length)
    return cases, vocab, prompt_ids


def _metrics_doc(labels: np.ndarray, scores: np.ndarray, acc: float,
                 fold_id, chash: str, n_boot: int, seed: int) -> dict:
    """The common metrics JSON shape; auc fields are null on one-class sets."""
    doc = {
        "accuracy": float(acc),
        "auc": None,
        "auc_ci": None,
        "prauc": None,
        "fold_id": fold_id,
        "config_hash": chash,
    }
    if int(labels.min()) != int(labels.max()):
        doc["auc"] = roc_auc(labels, scores)
        doc["prauc"] = pr_auc(labels, scores)
        if n_boot > 0:
            _, lo, hi = bootstrap_ci(labels, scores, roc_auc, n_boot=n_boot, seed=seed)
            doc["auc_ci"] = [lo, hi]
    return doc


def _subset_views(cases: list[LoadedCase], views: tuple[str, ...]) -> list[LoadedCase]:
    idx = [VIEW_ORDER.index(v) for v in views]
    return [LoadedCase(c.case_id, c.images[idx], c.label) for c in cases]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        task=args.task,
        count=args.n,
        image_size=args.image_size,
        blob_radius=tuple(args.blob_radius) if args.blob_radius else None,
        noise=args.noise,
        balance=args.balance,
        seed=args.seed,
    )
    meta = generate_synthetic(spec, args.out)
    n_pos = sum(m["label"] for m in meta)
    print(f"wrote {len(meta)} cases ({n_pos} positive); manifest {Path(args.out) / 'manifest.csv'}")
    return 0


def _train_one(cfg, cases, prompt_ids, snapshot_base, train_idx, val_idx,
               build_seed, fit_seed, out_dir: Path, fold_id):
    """Fit one model on one split; save its checkpoint, history, metrics doc."""
    model = VisionTextModel.build(cfg.model)
    model.materialize(seed=build_seed)
    result = fit(model, cases, train_idx, val_idx, prompt_ids, cfg.train, seed=fit_seed)
    res = evaluate(model, cases, val_idx, prompt_ids, result.norm, cfg.train.batch_size)
    snapshot = dict(
        snapshot_base,
        norm={"mean": result.norm.mean, "std": result.norm.std},
        fold_id=fold_id,
    )
    save_checkpoint(out_dir / "model", model.registry, snapshot)
    _write_csv(
        out_dir / "history.csv",
        ["epoch", "lr", "train_loss", "val_accuracy"],
        [[r.epoch, r.lr, r.train_loss, r.val_accuracy] for r in result.history],
    )
    doc = _metrics_doc(res.labels, res.scores, res.accuracy, fold_id,
                       snapshot_base["config_hash"], BOOTSTRAP_RESAMPLES, cfg.seed)
    return result, doc


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cases, vocab, prompt_ids = _prepare(cfg)
    labels = np.array([c.label for c in cases], dtype=np.int64)
    out = Path(cfg.out_dir)
    raw_cfg = config_to_dict(cfg)
    chash = config_hash(raw_cfg)
    snapshot_base = {"run_config": raw_cfg, "config_hash": chash, "vocab": list(vocab.tokens)}

    if cfg.train.kfold >= 2:
        from .training import stratified_kfold

        splits = stratified_kfold(labels, cfg.train.kfold, cfg.seed)
        docs = []
        for f, (train_idx, val_idx) in enumerate(splits):
            _, doc = _train_one(
                cfg, cases, prompt_ids, snapshot_base, train_idx, val_idx,
                build_seed=(cfg.seed, f), fit_seed=fold_seed(cfg.seed, f),
                out_dir=out / f"fold{f}", fold_id=f,
            )
            docs.append(doc)
            print(f"fold {f}: val accuracy {doc['accuracy']:.4f}, auc {doc['auc']:.4f}")
        keys = ("accuracy", "auc", "prauc")
        metrics = {
            "config_hash": chash,
            "folds": docs,
            "mean": {k: float(np.mean([d[k] for d in docs])) for k in keys},
            "std": {k: float(np.std([d[k] for d in docs])) for k in keys},
        }
        _write_json(out / "metrics.json", metrics)
        print(
            f"{cfg.train.kfold}-fold mean accuracy {metrics['mean']['accuracy']:.4f} "
            f"± {metrics['std']['accuracy']:.4f}; saved to {out}"
        )
        return 0

    train_idx, val_idx = stratified_holdout(labels, cfg.train.val_fraction, cfg.seed)
    result, doc = _train_one(
        cfg, cases, prompt_ids, snapshot_base, train_idx, val_idx,
        build_seed=cfg.seed, fit_seed=cfg.seed, out_dir=out, fold_id=None,
    )
    _write_json(out / "metrics.json", doc)
    print(
        f"trained {len(result.history)} epochs; best val accuracy "
        f"{result.best_val_accuracy:.4f} at epoch {result.best_epoch}; saved to {out}"
    )
    return 0


def _restore(base: str) -> tuple[VisionTextModel, dict]:
    probe = Path(base)
    manifest = probe.with_suffix(".json") if probe.suffix not in (".json",) else probe
    if not manifest.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {manifest}")
    snapshot = json.loads(manifest.read_text(encoding="utf-8"))["config"]
    cfg = run_config_from_dict(snapshot["run_config"])
    model = VisionTextModel.build(cfg.model)
    load_checkpoint(base, model.registry)
    model.bind()
    return model, snapshot


def cmd_eval(args) -> int:
    model, snapshot = _restore(args.checkpoint)
    cfg = run_config_from_dict(snapshot["run_config"])
    vocab = Vocabulary(tuple(snapshot["vocab"]))
    norm = NormStats(mean=snapshot["norm"]["mean"], std=snapshot["norm"]["std"])
    manifest = args.manifest or cfg.data.manifest
    if not manifest:
        raise ConfigError("no manifest given (pass --manifest or store one in the config)")
    cases = load_cases(manifest, cfg.model.vision.image_size, cfg.data.downsample)
    if cfg.model.vision.views != VIEW_ORDER:
        cases = _subset_views(cases, cfg.model.vision.views)
    prompt_ids = encode_prompt_pair(vocab, cfg.model.text.context_length, zero_shot=args.zero_shot)

    idx = np.arange(len(cases))
    res = evaluate(model, cases, idx, prompt_ids, norm, cfg.train.batch_size)

    out = Path(args.out) if args.out else Path(cfg.out_dir) / "eval"
    doc = _metrics_doc(res.labels, res.scores, res.accuracy, snapshot.get("fold_id"),
                       snapshot["config_hash"], args.bootstrap, cfg.seed)
    if doc["auc"] is not None:
        fpr, tpr, thr = roc_curve(res.labels, res.scores)
        _write_csv(out / "roc.csv", ["threshold", "x", "y"],
                   [[t, f, p] for t, f, p in zip(thr, fpr, tpr)])
        rec, prec, thr = pr_curve(res.labels, res.scores)
        _write_csv(out / "pr.csv", ["threshold", "x", "y"],
                   [[t, r, p] for t, r, p in zip(thr, rec, prec)])
    _write_csv(out / "predictions.csv", ["case_id", "label", "prediction", "score"],
               [[cid, int(l), int(p), float(s)]
                for cid, l, p, s in zip(res.case_ids, res.labels, res.predictions, res.scores)])
    _write_json(out / "metrics.json", doc)
    auc_note = "" if doc["auc"] is None else f", auc {doc['auc']:.4f}"
    print(f"evaluated {len(cases)} cases: accuracy {res.accuracy:.4f}{auc_note}; wrote {out}")
    return 0


def _sweep_settings(cfg: RunConfig, sweep: str):
    """Yield (label, model config, view subset or None) per sweep setting."""
    model = cfg.model
    if sweep == "local_global":
        n = model.vision.depth_local + model.vision.depth_global
        pairs = [(loc, n - loc) for loc in range(0, n + 1, 2)]
        if pairs[-1][0] != n:
            pairs.append((n, 0))
        for loc, glo in pairs:
            vision = dataclasses.replace(model.vision, depth_local=loc, depth_global=glo)
            yield f"local{loc}_global{glo}", dataclasses.replace(model, vision=vision), None
    elif sweep == "views":
        if model.vision.views != VIEW_ORDER:
            raise ConfigError("the views sweep needs a base config using all four views")
        for label, views in (
            ("cc_only", ("LCC", "RCC")),
            ("mlo_only", ("LMLO", "RMLO")),
            ("both", VIEW_ORDER),
        ):
            vision = dataclasses.replace(model.vision, views=views)
            yield label, dataclasses.replace(model, vision=vision), views
    elif sweep == "adapters":
        for label, vis, txt in (("image_only", True, False), ("text_only", False, True), ("both", True, True)):
            ad = dataclasses.replace(model.adapters, vision=vis, text=txt)
            yield label, dataclasses.replace(model, adapters=ad), None
    else:
        raise ConfigError(f"unknown sweep {sweep!r}; choose from {', '.join(SWEEPS)}")


def _run_setting(model_cfg, cases, prompt_ids, cfg, repeats: int):
    """Accuracy/AUC samples for one sweep setting.

    Seeds depend only on (cfg.seed, run index), so every setting sees the
    same splits and init draws and rows are comparable.
    """
    labels = np.array([c.label for c in cases], dtype=np.int64)
    accs, aucs = [], []
    if cfg.train.kfold >= 2:
        def build(seed, _cfg=model_cfg):
            m = VisionTextModel.build(_cfg)
            m.materialize(seed=seed)
            return m

        for fr in cross_validate(build, cases, prompt_ids, cfg.train, cfg.seed):
            accs.append(fr.eval.accuracy)
            aucs.append(roc_auc(fr.eval.labels, fr.eval.scores))
    else:
        for r in range(repeats):
            run_seed = fold_seed(cfg.seed, r)
            train_idx, val_idx = stratified_holdout(labels, cfg.train.val_fraction, run_seed)
            model = VisionTextModel.build(model_cfg)
            model.materialize(seed=(cfg.seed, r))
            fit_res = fit(model, cases, train_idx, val_idx, prompt_ids, cfg.train, seed=run_seed)
            res = evaluate(model, cases, val_idx, prompt_ids, fit_res.norm, cfg.train.batch_size)
            accs.append(res.accuracy)
            aucs.append(roc_auc(res.labels, res.scores))
    return accs, aucs


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    cases, _, prompt_ids = _prepare(cfg)
    if args.repeats < 1:
        raise ConfigError("--repeats must be positive")

    rows = []
    detail = {}
    for label, model_cfg, views in _sweep_settings(cfg, args.sweep):
        subset = _subset_views(cases, views) if views else cases
        accs, aucs = _run_setting(model_cfg, subset, prompt_ids, cfg, args.repeats)
        rows.append([
            args.sweep, label, len(accs),
            float(np.mean(accs)), float(np.std(accs)),
            float(np.mean(aucs)), float(np.std(aucs)),
        ])
        detail[label] = {"accuracy": accs, "auc": aucs}
        print(
            f"{args.sweep}/{label}: accuracy {np.mean(accs):.4f} ± {np.std(accs):.4f}, "
            f"auc {np.mean(aucs):.4f} ± {np.std(aucs):.4f}"
        )

    out = Path(cfg.out_dir)
    _write_csv(
        out / "ablation.csv",
        ["sweep", "setting", "runs", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std"],
        rows,
    )
    _write_json(out / "ablation.json", {
        "config_hash": config_hash(config_to_dict(cfg)),
        "sweep": args.sweep,
        "runs_per_setting": rows[0][2],
        "settings": detail,
    })
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_audit(args) -> int:
    model_cfg = audit_preset(args.backbone)
    if args.ratio is not None:
        adapters = dataclasses.replace(model_cfg.adapters, ratio=args.ratio)
        model_cfg = dataclasses.replace(model_cfg, adapters=adapters)
    model = VisionTextModel.build(model_cfg)  # registered shapes only, no arrays
    counts = apply_freeze_policy(model.registry, "adapters_only", tune_heads=False)
    payload = {
        "backbone": args.backbone,
        "adapter_ratio": model_cfg.adapters.ratio,
        "total_params": counts["total"],
        "trainable_params": counts["trainable"],
        "trainable_fraction": counts["trainable"] / counts["total"],
        "config_hash": config_hash(dataclasses.asdict(model_cfg)),
    }
    if args.out:
        _write_json(Path(args.out), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    results = gc.run_op_checks(step=args.step, seeds=args.seeds)
    for name, err in results.items():
        status = "ok" if err <= args.tolerance else "FAIL"
        if err > args.tolerance:
            failures += 1
        print(f"{name:<40} max rel err {err:.3e}  {status}")
    for name, err in gc.micro_model_check(step=args.step).items():
        status = "ok" if err <= args.tolerance else "FAIL"
        if err > args.tolerance:
            failures += 1
        print(f"{'model/' + name:<40} max rel err {err:.3e}  {status}")
    if failures:
        print(f"{failures} gradient check(s) exceeded tolerance {args.tolerance}")
        return RUNTIME_FAILURE
    print(f"all gradient checks within tolerance {args.tolerance}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here that is a validation error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(VALIDATION_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="viewfuse", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic four-view dataset")
    sp.add_argument("--task", required=True, choices=("presence", "asymmetry", "correspondence"))
    sp.add_argument("--n", type=int, required=True, help="number of cases")
    sp.add_argument("--out", required=True)
    sp.add_argument("--image-size", type=int, default=64)
    sp.add_argument("--blob-radius", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--balance", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_synth)

    tp = sub.add_parser("train", help="train on a manifest and save checkpoints")
    tp.add_argument("--config", default=None, help="run config JSON")
    tp.add_argument("--manifest", default=None)
    tp.add_argument("--out", default=None, help="output directory override")
    tp.add_argument("--seed", type=int, default=None)
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ep.add_argument("--checkpoint", required=True, help="checkpoint base path (no extension)")
    ep.add_argument("--manifest", default=None)
    ep.add_argument("--out", default=None)
    ep.add_argument("--zero-shot", action="store_true", help="use the short prompt pair")
    ep.add_argument("--bootstrap", type=int, default=BOOTSTRAP_RESAMPLES,
                    help="bootstrap resamples for the AUC CI (0 disables)")
    ep.set_defaults(fn=cmd_eval)

    ap = sub.add_parser("ablate", help="sweep one design axis and compare settings")
    ap.add_argument("--config", default=None)
    ap.add_argument("--manifest", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--sweep", required=True, choices=SWEEPS)
    ap.add_argument("--repeats", type=int, default=3,
                    help="holdout repeats per setting when the config has kfold 0")
    ap.set_defaults(fn=cmd_ablate)

    up = sub.add_parser("audit", help="parameter audit for a full-scale backbone")
    up.add_argument("--backbone", required=True, choices=("vitb32", "vitb16", "vitl14"))
    up.add_argument("--ratio", type=int, default=None, help="adapter bottleneck ratio override")
    up.add_argument("--out", default=None, help="write audit JSON here as well")
    up.set_defaults(fn=cmd_audit)

    gp = sub.add_parser("gradcheck", help="finite-difference checks of every op and a tiny model")
    gp.add_argument("--step", type=float, default=gc.DEFAULT_STEP)
    gp.add_argument("--seeds", type=int, default=5)
    gp.add_argument("--tolerance", type=float, default=1e-4)
    gp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and usage errors (1)
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return RUNTIME_FAILURE
    except (ValueError, CheckpointError, FileNotFoundError) as exc:
        # covers ConfigError and ManifestError, both ValueError subclasses
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except Exception:
        traceback.print_exc()
        return RUNTIME_FAILURE


if __name__ == "__main__":
    sys.exit(main())
