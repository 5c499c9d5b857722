"""Command-line surface: one subcommand per pipeline stage.

Every subcommand accepts ``--config`` (JSON, defaults apply to whatever it
omits) and ``--seed`` (overrides both the run seed and the scene seed),
and every artifact directory receives a ``config.json`` echo of the exact
configuration that produced it. Timing goes to stderr so artifacts and
stdout stay byte-stable for a fixed seed.

Exit codes: 0 success, 1 domain/config/file errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .concurrency import worker_count
from .config import ExperimentConfig, load_config, serialize_config, with_seed
from .datasets import load_datasets, load_pseudo_labels, write_datasets, write_pseudo_labels
from .engine import (
    pseudo_label,
    run_ablation_grid,
    train_student,
    train_teacher,
    train_summary,
)
from .errors import DepthForgeError
from .evaluation import evaluate_model, metrics_csv
from .gradsuite import run_gradient_suite
from .model import ToyDepthModel, load_checkpoint, save_checkpoint
from .synth import generate_datasets

PROG = "depthforge"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="Self-trained monocular relative-depth toy pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override run and scene seeds")
        return p

    p = stage("gen-data", "synthesize the labeled/unlabeled/test splits")
    p.add_argument("--out", type=Path, required=True)

    p = stage("train-teacher", "train the supervised baseline on the labeled split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = stage("pseudo-label", "predict disparity for every unlabeled image")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = stage("train-student", "train the student on labeled + pseudo-labeled data")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pseudo", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = stage("eval", "score a checkpoint on the shifted test split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = stage("ablate", "run the staged flag/margin grid and emit its CSV")
    p.add_argument("--out", type=Path, required=True)

    stage("gradcheck", "finite-difference check of every loss and the model forward")
    return parser


def _experiment(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = with_seed(config, args.seed)
    return config


def _prepare_out(out: Path, config: ExperimentConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(serialize_config(config), encoding="utf-8")
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_data(args) -> int:
    config = _experiment(args)
    out = _prepare_out(args.out, config)
    data = generate_datasets(config.data)
    write_datasets(out, data, config_echo=json.loads(serialize_config(config)))
    print(f"wrote {len(data.labeled)} labeled / {len(data.unlabeled)} unlabeled / "
          f"{len(data.test)} test samples to {out}")
    return 0


def cmd_train_teacher(args) -> int:
    config = _experiment(args)
    data, _ = load_datasets(args.data)
    out = _prepare_out(args.out, config)
    result = train_teacher(data.labeled, config.run)
    save_checkpoint(out / "teacher.ckpt", result.params, result.patch_size, result.feature_dim)
    _write_json(out / "report.json", {"stage": "train-teacher", "result": train_summary(result)})
    print(f"wrote {out / 'teacher.ckpt'} ({len(result.step_losses)} steps)")
    return 0


def cmd_pseudo_label(args) -> int:
    config = _experiment(args)
    data, _ = load_datasets(args.data)
    params, patch_size, feature_dim = load_checkpoint(args.checkpoint)
    model = ToyDepthModel(params, patch_size, feature_dim)
    out = _prepare_out(args.out, config)
    pseudo = pseudo_label(model, data.unlabeled)
    write_pseudo_labels(out, pseudo, model_checksum=model.checksum())
    print(f"wrote {len(pseudo)} pseudo-labels to {out}")
    return 0


def cmd_train_student(args) -> int:
    config = _experiment(args)
    data, _ = load_datasets(args.data)
    pseudo = load_pseudo_labels(args.pseudo, data.unlabeled)
    out = _prepare_out(args.out, config)
    result = train_student(data.labeled, pseudo, config.run)
    save_checkpoint(out / "student.ckpt", result.params, result.patch_size, result.feature_dim)
    _write_json(out / "report.json", {"stage": "train-student", "result": train_summary(result)})
    print(f"wrote {out / 'student.ckpt'} ({len(result.step_losses)} steps)")
    return 0


def cmd_eval(args) -> int:
    config = _experiment(args)
    data, _ = load_datasets(args.data)
    params, patch_size, feature_dim = load_checkpoint(args.checkpoint)
    model = ToyDepthModel(params, patch_size, feature_dim)
    out = _prepare_out(args.out, config)
    report = evaluate_model(model, data.test)
    (out / "metrics.csv").write_text(metrics_csv({"test": report}), encoding="utf-8")
    print(f"wrote {out / 'metrics.csv'} "
          f"(absrel {report.absrel:.6g}, d1 {report.delta1:.6g}, {report.n_images} images)")
    return 0


def cmd_ablate(args) -> int:
    config = _experiment(args)
    out = _prepare_out(args.out, config)
    result = run_ablation_grid(config.run, config.data)
    (out / "ablation.csv").write_text(result.csv_text, encoding="utf-8")
    print(f"wrote {out / 'ablation.csv'} ({len(result.rows)} rows)")
    return 0


def cmd_gradcheck(args) -> int:
    config = _experiment(args)
    results = run_gradient_suite(seed=config.run.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        failed += not result.passed
        print(f"{status}  {result.name}: max relative error {result.max_relative_error:.3e} "
              f"(threshold {result.threshold:g})")
    if failed:
        print(f"{failed} gradient check(s) failed", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "pseudo-label": cmd_pseudo_label,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        worker_count()  # fail fast on a malformed DEPTHFORGE_THREADS
        code = _COMMANDS[args.command](args)
    except DepthForgeError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = f"{exc.strerror}: {name}" if name else str(exc)
        print(f"{PROG}: error: {detail}", file=sys.stderr)
        return 1
    print(f"{args.command} finished in {time.perf_counter() - started:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
