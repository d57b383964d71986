"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flags, config, manifest or
generator settings), 2 runtime failure (training diverged, I/O error during a run, failed
gradient check).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import OUTPUT_ENV, ConfigError, RunConfig, format_config, load_config
from .data import SPLITS, UNASSIGNED, ManifestError, SpecError, SynthSpec, gen_synthetic, load_manifest, stratified_split, validate_spec
from .fusion import LABEL_NAMES, STRATEGIES
from .gradcheck import format_results, timed_gradcheck
from .metrics import ABLATION_ROWS, EvalReport, evaluate, render_comparison, render_per_class, write_report
from .model import MODALITIES, IntentModel, load_checkpoint, save_checkpoint
from .text import build_vocab
from .training import make_rngs, predict, prepare_split, train, write_history
from .vision import ImagePipeline, AugmentPolicy

ABLATION_ORDER = ("text", "image", "early", "late", "intermediate")


class UsageError(ValueError):
    """Bad command-line input detected before any compute."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _setup_logging(verbosity: int) -> None:
    """0 quiet, 1 progress lines, 2+ per-epoch training logs."""
    logging.basicConfig(level=logging.INFO if verbosity >= 2 else logging.WARNING, format="%(message)s", force=True)


def _load_run_config(args) -> RunConfig:
    overrides = {"seed": str(args.seed)} if getattr(args, "seed", None) is not None else None
    cfg = load_config(args.config, overrides)
    _setup_logging(max(cfg.verbosity, args.verbose + 1))
    return cfg


def _load_dataset(cfg: RunConfig):
    images: dict = {}
    samples = load_manifest(cfg.dataset_path, images=images)
    if any(s.split == UNASSIGNED for s in samples):
        samples = stratified_split(samples, seed=cfg.seed)
    for split in SPLITS:
        if not any(s.split == split for s in samples):
            raise ManifestError([f"{cfg.dataset_path}: split {split!r} is empty"])
    return samples, images


def _ensure_writable(path: Path) -> None:
    probe = path
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")


def _group_of(modality: str, strategy: str) -> str:
    return strategy if modality == "both" else modality


def run_experiment(cfg: RunConfig, samples, images, modality: str, strategy: str, out_dir: Path, seed: int | None = None):
    """Train one model, evaluate it on the test split and write all artifacts.

    Returns ``(EvalReport, TrainResult)``.
    """
    seed = cfg.seed if seed is None else seed
    by_split = {s: [x for x in samples if x.split == s] for s in SPLITS}
    vocab = None
    if modality != "image":
        vocab = build_vocab([s.text for s in by_split["train"]], cfg.text.max_vocab)
    mcfg = cfg.model_config(len(vocab) if vocab else 4, modality, strategy)
    pipeline = cfg.pipeline() if modality != "text" else None
    image_size = cfg.vision.image_size if modality != "text" else None
    trunc: list[str] = []
    splits = {k: prepare_split(v, images, vocab, cfg.text.max_len, image_size, trunc) for k, v in by_split.items()}

    model = IntentModel(mcfg, make_rngs(seed)["init"])
    tcfg = cfg.train_config()
    if seed != cfg.seed:
        tcfg = replace(tcfg, seed=seed)
    result = train(model, splits["train"], splits["val"], tcfg, pipeline, augment=cfg.augment.enabled)
    _, preds, _ = predict(model, splits["test"], pipeline)
    group = _group_of(modality, strategy)
    report = evaluate(preds, splits["test"].labels, model_id=mcfg.model_id, strategy=group, label=mcfg.row_label)

    out_dir.mkdir(parents=True, exist_ok=True)
    extra = {
        "seed": seed,
        "best_epoch": result.best_epoch,
        "image": {"mean": list(cfg.image.mean), "std": list(cfg.image.std), "sharpen_alpha": cfg.image.sharpen_alpha},
    }
    save_checkpoint(out_dir / "checkpoint.tfu", model, vocab, extra)
    write_history(out_dir / "history.tsv", result.history)
    write_report(out_dir, report)
    (out_dir / "truncation.log").write_text("".join(line + "\n" for line in trunc), encoding="utf-8")
    (out_dir / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    return report, result


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    try:
        spec = SynthSpec.from_text(Path(args.spec).read_text(encoding="utf-8")) if args.spec else SynthSpec()
    except OSError as exc:
        raise UsageError(f"cannot read spec {args.spec}: {exc.strerror}") from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    validate_spec(spec)
    out = Path(args.out)
    _ensure_writable(out)
    samples, _ = gen_synthetic(spec, out)
    print(split_table(samples), end="")
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def split_table(samples) -> str:
    """Per-class, per-split counts with a total row."""
    counts = np.zeros((len(LABEL_NAMES), len(SPLITS)), dtype=int)
    for s in samples:
        counts[int(s.label), SPLITS.index(s.split)] += 1
    width = max(len(n) for n in LABEL_NAMES + ("Total",))
    head = f"{'Intent':<{width}}  {'Train':>6}  {'Test':>6}  {'Val':>6}"
    lines = [head, "-" * len(head)]
    for name, row in zip(LABEL_NAMES, counts):
        lines.append(f"{name:<{width}}  {row[0]:>6}  {row[1]:>6}  {row[2]:>6}")
    tot = counts.sum(axis=0)
    lines += ["-" * len(head), f"{'Total':<{width}}  {tot[0]:>6}  {tot[1]:>6}  {tot[2]:>6}"]
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    modality = args.modality or cfg.model.modality
    samples, images = _load_dataset(cfg)
    group = _group_of(modality, cfg.fusion.strategy)
    out = cfg.output_path / group
    _ensure_writable(out)
    report, result = run_experiment(cfg, samples, images, modality, cfg.fusion.strategy, out)
    print(render_comparison([report], "unimodal" if group in ("text", "image") else "fusion"), end="")
    print(f"{report.label}: best epoch {result.best_epoch} of {result.epochs_run}; artifacts in {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_run_config(args)
    samples, images = _load_dataset(cfg)
    root = cfg.output_path / "compare"
    _ensure_writable(root)
    reports: list[EvalReport] = []
    for i, group in enumerate(ABLATION_ORDER):
        modality = group if group in ("text", "image") else "both"
        strategy = group if modality == "both" else cfg.fusion.strategy
        seed = cfg.seed + i if args.decorrelate_seeds else cfg.seed
        try:
            report, result = run_experiment(cfg, samples, images, modality, strategy, root / group, seed)
        except Exception as exc:
            done = ", ".join(ABLATION_ROWS[r.strategy] for r in reports) or "none"
            print(f"compare aborted during {ABLATION_ROWS[group]}: {exc}", file=sys.stderr)
            print(f"partial results (completed runs: {done})", file=sys.stderr)
            if reports:
                print(render_comparison(reports, "ablation"), end="", file=sys.stderr)
            return 2
        if cfg.verbosity >= 1:
            print(
                f"{ABLATION_ROWS[group]:<20} best epoch {result.best_epoch:2d}/{result.epochs_run:2d}  test F1 {report.macro_f1:.4f}",
                file=sys.stderr,
            )
        reports.append(report)
    table = render_comparison(reports, "ablation")
    (root / "comparison.txt").write_text(table, encoding="utf-8")
    tsv = ["group\tmodel_id\taccuracy\tmacro_precision\tmacro_recall\tmacro_f1"]
    tsv += [f"{r.strategy}\t{r.model_id}\t{r.accuracy!r}\t{r.macro_precision!r}\t{r.macro_recall!r}\t{r.macro_f1!r}" for r in reports]
    (root / "comparison.tsv").write_text("\n".join(tsv) + "\n", encoding="utf-8")
    print(table, end="")
    return 0


def cmd_eval(args) -> int:
    ckpt, manifest_path = Path(args.checkpoint), Path(args.manifest)
    if not ckpt.is_file():
        raise UsageError(f"--checkpoint: no such file {ckpt}")
    images: dict = {}
    samples = load_manifest(manifest_path, images=images)
    if args.split != "all":
        samples = [s for s in samples if s.split == args.split]
    if not samples:
        raise UsageError(f"{manifest_path}: no samples in split {args.split!r}")
    model, vocab, meta = load_checkpoint(ckpt)
    mcfg = model.cfg
    pipeline = None
    if mcfg.vision is not None:
        im = meta.get("image", {})
        pipeline = ImagePipeline(
            mcfg.vision.image_size,
            tuple(im.get("mean", (0.485, 0.456, 0.406))),
            tuple(im.get("std", (0.229, 0.224, 0.225))),
            AugmentPolicy.disabled(),
            im.get("sharpen_alpha", 1.0),
        )
    max_len = mcfg.text.max_len if mcfg.text is not None else 2
    image_size = mcfg.vision.image_size if mcfg.vision is not None else None
    split = prepare_split(samples, images, vocab, max_len, image_size)
    _, preds, _ = predict(model, split, pipeline)
    report = evaluate(preds, split.labels, model_id=mcfg.model_id, strategy=mcfg.group, label=mcfg.row_label)
    print(render_comparison([report], "unimodal" if mcfg.group in ("text", "image") else "fusion"), end="")
    print(render_per_class(report), end="")
    out = args.out or os.environ.get(OUTPUT_ENV)
    if out:
        write_report(Path(out), report, stem=f"eval_{args.split}")
    return 0


def cmd_gradcheck(args) -> int:
    overrides = {"seed": str(args.seed)} if args.seed is not None else None
    cfg = load_config(args.config, overrides, check_paths=False)
    text = cfg.text_config(vocab_size=16)
    vision = cfg.vision_config()
    results, counts, elapsed = timed_gradcheck(text, vision, seed=cfg.seed, activation=cfg.fusion.activation)
    text_out = format_results(results, counts, elapsed)
    print(text_out, end="")
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.txt").write_text(text_out, encoding="utf-8")
    failed = [r for r in results if not r.passed]
    if failed:
        for r in failed:
            print(f"gradient mismatch in {r.strategy}/{r.group}: {r.worst_param} rel err {r.max_error:.3e}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="intentfuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="repeat for per-epoch logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a planted-signal synthetic dataset")
    g.add_argument("--spec", help="key=value SynthSpec file (defaults if omitted)")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model and report on the test split")
    t.add_argument("--config", required=True)
    t.add_argument("--modality", choices=MODALITIES)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", choices=(*SPLITS, "all"), default="test")
    e.add_argument("--out", help="also write report files here")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="train the five ablation rows and tabulate them")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--decorrelate-seeds", action="store_true", help="offset the seed per sub-run")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("gradcheck", help=f"finite-difference check for {', '.join(STRATEGIES)}")
    k.add_argument("--config", required=True)
    k.add_argument("--seed", type=int)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose + 1)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, SpecError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
