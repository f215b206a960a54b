"""Command-line entry point: gen-data, train, eval, ablate, selfcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite values or a failed self-check).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import ablation, plotting
from .checkpoint import CheckpointError
from .config import PRESETS, ConfigError, load_config
from .data import DataError, Dataset
from .numerics import NumericalError
from .synthetic import SYNTHETIC_PRESETS, SyntheticSpec, gen_synthetic

log = logging.getLogger("kbca")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _model_config(args, extra_sections=("ablation",)):
    """Preset < config file < command-line flags."""
    obj = dict(PRESETS[args.preset]) if args.preset else {}
    sections = {}
    if args.config:
        file_obj = _read_json(args.config)
        if not isinstance(file_obj, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        for key in extra_sections:
            if key in file_obj:
                sections[key] = file_obj.pop(key)
        obj.update(file_obj)
    flags = {
        "seed": args.seed,
        "variant": getattr(args, "variant", None),
        "prior_source": getattr(args, "prior_source", None),
        "kl_weight": getattr(args, "kl_weight", None),
    }
    obj.update({k: v for k, v in flags.items() if v is not None})
    return load_config(None, None, **obj), sections


def _load_data(path):
    if path is None:
        raise UsageError("--data is required")
    return Dataset.load(path)


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------
def cmd_gen_data(args):
    obj = dict(SYNTHETIC_PRESETS[args.preset]) if args.preset else {}
    if args.config:
        obj.update(_read_json(args.config))
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.n_items is not None:
        obj["n_items"] = args.n_items
    try:
        spec = SyntheticSpec.from_dict(obj)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from None
    out = gen_synthetic(spec, _out_dir(args, "data"))
    print(f"wrote {spec.n_items} utterances to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg, _ = _model_config(args)
    from .train import train

    ds = _load_data(args.data)
    out = _out_dir(args, "run")

    def progress(row):
        print(
            f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.4f}  kl {row['train_kl']:.4f}  "
            f"val_loss {row['val_loss']:.4f}  val_UA {row['val_ua']:.4f}  val_WA {row['val_wa']:.4f}",
            flush=True,
        )

    _, report = train(cfg, ds, checkpoint=out / "model.kbca", progress=None if args.quiet else progress)
    write_json(out / "report.json", report)
    plotting.plot_training_curves(report["epochs"], out / "curves.png", title=f"{cfg.variant} ({cfg.prior_source})")
    print(f"best epoch {report['best_epoch']}  val UA {report['best_val_ua']:.4f}  val WA {report['best_val_wa']:.4f}")
    if "test_ua" in report:
        print(f"test UA {report['test_ua']:.4f}  test WA {report['test_wa']:.4f}")
    print(f"checkpoint, report and curves written to {out}")
    return EXIT_OK


def cmd_eval(args):
    from .train import evaluate

    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    ds = _load_data(args.data)
    res = evaluate(args.checkpoint, ds, args.split)
    report = {k: res[k] for k in ("ua", "wa", "per_class_recall", "confusion", "n")}
    report["split"] = args.split
    print(f"{args.split}: n={res['n']}  UA {res['ua']:.4f}  WA {res['wa']:.4f}")
    print("per-class recall: " + "  ".join(f"{r:.4f}" for r in res["per_class_recall"]))
    print("confusion (rows gold, cols predicted):")
    for row in res["confusion"]:
        print("  " + " ".join(f"{v:5d}" for v in row))
    if args.out:
        out = _out_dir(args, "eval")
        write_json(out / f"eval_{args.split}.json", report)
        plotting.plot_confusion(res["confusion"], out / f"confusion_{args.split}.png")
    return EXIT_OK


def cmd_ablate(args):
    cfg, sections = _model_config(args)
    opts = sections.get("ablation", {})
    unknown = set(opts) - {"configs", "repeats", "folds", "workers"}
    if unknown:
        raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
    names = args.configs.split(",") if args.configs else opts.get("configs", list(ablation.GRID))
    if args.baselines:
        names = list(names) + [n for n in ablation.BASELINES if n not in names]
    repeats = args.repeats if args.repeats is not None else opts.get("repeats", 3)
    folds = args.folds if args.folds is not None else opts.get("folds", 0)
    workers = args.workers if args.workers is not None else opts.get("workers", 1)
    for n in names:
        if n not in ablation.VARIANTS:
            raise ConfigError(f"unknown ablation config {n!r}; choose from {sorted(ablation.VARIANTS)}")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    _load_data(args.data)  # fail early on a bad dataset
    out = _out_dir(args, "ablation")

    def progress(r):
        fold = f" fold {r.fold}" if r.fold >= 0 else ""
        print(f"{r.name:<20} seed {r.seed}{fold}  test UA {r.ua:.4f}  WA {r.wa:.4f}  (best epoch {r.best_epoch})", flush=True)

    results = ablation.run_ablation(args.data, cfg, names, repeats, folds, workers, None if args.quiet else progress)
    rows = ablation.summarize(results)
    table = ablation.to_table(rows)
    (out / "ablation.csv").write_text(ablation.to_csv(rows), encoding="utf-8")
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    write_json(out / "ablation.json", {
        "config": cfg.to_dict(), "repeats": repeats, "folds": folds, "rows": rows,
        "runs": [r.__dict__ for r in results],
    })
    plotting.plot_ablation(rows, out / "ablation.png")
    print(table, end="")
    return EXIT_OK


def cmd_selfcheck(args):
    from .selfcheck import selfcheck

    names = args.only.split(",") if args.only else None
    results = selfcheck(names)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if args.out:
        out = _out_dir(args, "selfcheck")
        write_json(out / "selfcheck.json", [
            {"name": r.name, "passed": r.passed, "value": r.value, "tolerance": r.tolerance} for r in results
        ])
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser():
    p = _Parser(prog="kbca", description="Knowledge-aware Bayesian co-attention for emotion recognition.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model_flags=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if model_flags:
            sp.add_argument("--preset", choices=sorted(PRESETS))
            sp.add_argument("--data", help="dataset directory")
            sp.add_argument("--variant", choices=["det", "bam"])
            sp.add_argument("--prior-source", choices=["knowledge", "key", "uniform"])
            sp.add_argument("--kl-weight", type=float)
            sp.add_argument("-q", "--quiet", action="store_true")

    g = sub.add_parser("gen-data", help="write a knowledge-planted synthetic dataset")
    common(g, model_flags=False)
    g.add_argument("--preset", choices=sorted(SYNTHETIC_PRESETS))
    g.add_argument("--n-items", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run the variant grid over several seeds")
    common(a)
    a.add_argument("--configs", help=f"comma-separated subset of {','.join(ablation.VARIANTS)}")
    a.add_argument("--baselines", action="store_true", help="append the single-modality baselines")
    a.add_argument("--repeats", type=int)
    a.add_argument("--folds", type=int, help="k-fold over hashed utterance ids (k >= 3)")
    a.add_argument("--workers", type=int)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("selfcheck", help="numerical release checks")
    s.add_argument("--only", help="comma-separated check names")
    s.add_argument("--out")
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"kbca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"kbca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"kbca: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
