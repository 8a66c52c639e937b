"""Command-line entry point: gen-data, train, eval, experiment.

Every command resolves its settings as flags over ``--config`` over built-in
defaults, writes its outputs atomically, and records a ``manifest.json``
holding the resolved settings.  Passing that manifest back through
``--config`` reruns the command with identical results.

The config file is a flat JSON object whose keys are the long flag names
with dashes replaced by underscores, e.g. ``{"seed": 3, "n_train": 500}``.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from importlib import metadata

import numpy as np

from . import evaluation as ev
from .mask_distribution import MaskDistribution
from .models import LogisticRegressionModel, PredictionVariant, model_from_record
from .synthetic_data import bayes_optimal_accuracy, generate, load_csv, save_csv
from .training import ALGORITHMS, StepSchedule, TrainConfig, TrainingError, run

SPLITS = ("train", "valid", "test")


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class CommandError(Exception):
    """Bad input detected by a command; reported without a traceback."""


# -- settings resolution ----------------------------------------------------------------

DATA_KEYS = ("n_informative", "n_noise", "mean_shift", "feature_std", "n_train", "n_valid", "n_test")

DEFAULTS = {
    "gen-data": {"seed": 0, "scale": "paper", **{k: None for k in DATA_KEYS}},
    "train": {
        "seed": 0, "algorithm": "for", "data": None, "a": 1e-3, "b": 1e3, "c": 1e-3, "d": 1e4,
        "delta": "1/n", "iterations": 20_000, "dropout_rate": 0.5, "initial_keep_prob": 0.5,
        "baseline": False, "baseline_decay": 0.99, "minibatch_size": 1, "fit_bias": False,
        "progress_every": None,
    },
    "eval": {
        "seed": 0, "model": None, "mask": None, "data": None,
        "predictor": None, "samples": 1000,
    },
    "experiment": {
        "seed": 0, "scale": "smoke", "grid": "best", "iterations": None, "delta": 1e-3,
        "baseline": None, "minibatch_size": 1, "repeats": 1, "workers": 1,
        "algorithms": list(ev.EXPERIMENT_ALGORITHMS),
    },
}


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise CommandError(f"{path}: config must be a JSON object")
    # a manifest from an earlier run carries its settings under "config"
    if "manifest_version" in doc:
        doc = doc.get("config", {})
    return doc


def resolve(command, args):
    """Merge defaults, the config file and explicit flags, in that order."""
    defaults = DEFAULTS[command]
    conf = _read_config(args.config)
    unknown = sorted(set(conf) - set(defaults))
    if unknown:
        raise CommandError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else conf.get(key, default)
    return out


def _parse_delta(text):
    if text in ("1/t", "1/n"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("delta must be a number, '1/n' or '1/t'") from None


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# -- output helpers -------------------------------------------------------------------------


def _atomic_write(path, text):
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc.strerror}") from None


def _prepare_out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def _write_manifest(out_dir, command, config, seeds, artifacts, timings, extra=None):
    doc = {
        "manifest_version": 1,
        "command": command,
        "tool_version": _version(),
        "config": config,
        "seeds": seeds,
        "artifacts": artifacts,
        "timings": timings,
    }
    doc.update(extra or {})
    _atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_split(path, split):
    if os.path.isdir(path):
        path = os.path.join(path, f"{split}.csv")
    if not os.path.exists(path):
        raise CommandError(f"data file not found: {path}")
    try:
        return path, load_csv(path, split)
    except ValueError as exc:
        raise CommandError(str(exc)) from None


# -- commands -----------------------------------------------------------------------------


def cmd_gen_data(args):
    cfg = resolve("gen-data", args)
    if cfg["scale"] not in ev.SCALE_DATA:
        raise CommandError(f"unknown scale {cfg['scale']!r}")
    base = ev.SCALE_DATA[cfg["scale"]]
    overrides = {k: cfg[k] for k in DATA_KEYS if cfg[k] is not None}
    data_seed = ev.derive_seed(cfg["seed"], "data")
    try:
        data_config = replace(base, seed=data_seed, **overrides)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    out_dir = _prepare_out_dir(args.out_dir)
    t0 = time.perf_counter()
    splits = generate(data_config)
    artifacts = {}
    for name in SPLITS:
        path = os.path.join(out_dir, f"{name}.csv")
        tmp = path + ".tmp"
        try:
            save_csv(splits[name], tmp)
            os.replace(tmp, path)
        except OSError as exc:
            raise CommandError(f"cannot write {path}: {exc.strerror}") from None
        artifacts[name] = f"{name}.csv"
    resolved = {**cfg, **{k: getattr(data_config, k) for k in DATA_KEYS}}
    _write_manifest(out_dir, "gen-data", resolved, {"root": cfg["seed"], "data": data_seed}, artifacts,
                    {"total_seconds": time.perf_counter() - t0},
                    {"data_config": data_config.to_dict(),
                     "bayes_optimal": bayes_optimal_accuracy(data_config)})
    print(f"wrote {', '.join(artifacts.values())} to {out_dir}")
    return 0


def cmd_train(args):
    cfg = resolve("train", args)
    if cfg["data"] is None:
        raise CommandError("train needs --data (a training CSV or a gen-data directory)")
    if cfg["algorithm"] not in ALGORITHMS or cfg["algorithm"] == "grouped":
        raise CommandError(f"unknown algorithm {cfg['algorithm']!r}")
    data_path, train = _load_split(cfg["data"], "train")
    cfg["data"] = os.path.abspath(data_path)
    train_seed = ev.derive_seed(cfg["seed"], "train", cfg["algorithm"])
    try:
        schedule = StepSchedule(cfg["a"], cfg["b"], cfg["c"], cfg["d"], cfg["delta"])
        config = TrainConfig(
            algorithm=cfg["algorithm"], iterations=int(cfg["iterations"]), seed=train_seed,
            dropout_rate=cfg["dropout_rate"], minibatch_size=int(cfg["minibatch_size"]),
            baseline=bool(cfg["baseline"]), baseline_decay=cfg["baseline_decay"],
            initial_keep_prob=cfg["initial_keep_prob"], progress_every=cfg["progress_every"],
        )
    except ValueError as exc:
        raise CommandError(str(exc)) from None

    out_dir = _prepare_out_dir(args.out_dir)
    records = []
    t0 = time.perf_counter()
    model = LogisticRegressionModel.zeros(train.n_features, fit_bias=bool(cfg["fit_bias"]))
    try:
        state = run(model, train, schedule, config, progress=records.append)
    except TrainingError as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - t0

    artifacts = {"model": "model.txt", "progress": "progress.log"}
    _atomic_write(os.path.join(out_dir, "model.txt"), state.model.to_record() + "\n")
    if state.q is not None:
        _atomic_write(os.path.join(out_dir, "mask.txt"), state.q.to_record() + "\n")
        artifacts["mask"] = "mask.txt"
    _atomic_write(os.path.join(out_dir, "progress.log"),
                  "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _write_manifest(out_dir, "train", cfg, {"root": cfg["seed"], "train": train_seed}, artifacts,
                    {"train_seconds": elapsed})
    last = records[-1] if records else None
    summary = f"trained {cfg['algorithm']} for {state.t} iterations"
    if last:
        summary += f"; mean train log-likelihood {last['train_loglik']:.6f}"
    print(summary)
    return 0


def _default_predictor(q):
    return "plain" if q is None else "gaussian"


def cmd_eval(args):
    cfg = resolve("eval", args)
    if cfg["model"] is None or cfg["data"] is None:
        raise CommandError("eval needs --model and --data")
    model_path = cfg["model"]
    if os.path.isdir(model_path):
        if cfg["mask"] is None and os.path.exists(os.path.join(model_path, "mask.txt")):
            cfg["mask"] = os.path.join(model_path, "mask.txt")
        model_path = os.path.join(model_path, "model.txt")
    try:
        with open(model_path, encoding="utf-8") as fh:
            model = model_from_record(fh.read())
        q = None
        if cfg["mask"] is not None:
            with open(cfg["mask"], encoding="utf-8") as fh:
                q = MaskDistribution.from_record(fh.read())
    except OSError as exc:
        raise CommandError(f"cannot read {exc.filename}: {exc.strerror}") from None
    except ValueError as exc:
        raise CommandError(f"bad checkpoint: {exc}") from None
    data_path, data = _load_split(cfg["data"], "test")
    if data.n_features != model.mask_dim:
        raise CommandError(f"{data_path} has {data.n_features} features, model expects {model.mask_dim}")
    kind = cfg["predictor"] or _default_predictor(q)
    if kind != "plain" and q is None:
        raise CommandError(f"predictor {kind!r} needs --mask")
    try:
        predictor = PredictionVariant(kind, int(cfg["samples"]) if kind == "monte_carlo" else 0)
        rng = np.random.default_rng(ev.derive_seed(cfg["seed"], "eval"))
        acc = ev.accuracy(model, predictor, data, q, rng)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    cfg.update(model=os.path.abspath(model_path), data=os.path.abspath(data_path), predictor=kind,
               mask=None if cfg["mask"] is None else os.path.abspath(cfg["mask"]))
    out_dir = _prepare_out_dir(args.out_dir)
    result = {"accuracy": acc, "predictor": kind, "n_samples": len(data.labels)}
    _atomic_write(os.path.join(out_dir, "eval.json"), json.dumps(result, indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, "eval", cfg, {"root": cfg["seed"]}, {"result": "eval.json"}, {})
    print(f"accuracy {acc:.6f} ({kind}, {len(data.labels)} samples)")
    return 0


def cmd_experiment(args):
    cfg = resolve("experiment", args)
    scale = cfg["scale"]
    if scale not in ev.SCALE_DATA:
        raise CommandError(f"unknown scale {scale!r}")
    if cfg["grid"] not in ("best", "full"):
        raise CommandError(f"unknown grid {cfg['grid']!r}")
    algorithms = cfg["algorithms"]
    if isinstance(algorithms, str):
        algorithms = [a for a in algorithms.split(",") if a]
    bad = [a for a in algorithms if a not in ev.EXPERIMENT_ALGORITHMS]
    if bad or not algorithms:
        raise CommandError(f"unknown algorithms: {', '.join(bad) or '(none)'}")
    cfg["algorithms"] = list(algorithms)
    defaults = ev.SCALE_SETTINGS[scale]
    if cfg["iterations"] is None:
        cfg["iterations"] = defaults.iterations
    if cfg["baseline"] is None:
        cfg["baseline"] = defaults.baseline
    try:
        settings = ev.RunSettings(iterations=int(cfg["iterations"]), delta=cfg["delta"],
                                  baseline=bool(cfg["baseline"]), minibatch_size=int(cfg["minibatch_size"]))
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    grid = ev.best_grids(scale) if cfg["grid"] == "best" else ev.GridSpec()
    out_dir = _prepare_out_dir(args.out_dir)
    t0 = time.perf_counter()
    result = ev.run_experiment(ev.SCALE_DATA[scale], grid, cfg["seed"], settings,
                               algorithms=tuple(algorithms), workers=int(cfg["workers"]),
                               repeats=int(cfg["repeats"]))
    total = time.perf_counter() - t0
    paths = ev.write_experiment(result, out_dir)
    timings = {"total_seconds": total}
    timings.update({f"{r.algorithm}_seconds": r.wall_time for r in result.algorithms})
    seeds = {"root": cfg["seed"], "data": ev.derive_seed(cfg["seed"], "data")}
    seeds.update({f"train_{a}": ev.derive_seed(cfg["seed"], "train", a) for a in algorithms})
    _write_manifest(out_dir, "experiment", cfg, seeds,
                    {k: os.path.basename(v) for k, v in paths.items()}, timings)
    for r in result.algorithms:
        if r.error:
            print(f"{r.algorithm:6s} FAILED: {r.error}", file=sys.stderr)
        else:
            print(f"{r.algorithm:6s} test accuracy {r.test_accuracy:.4f} (validation {r.validation_accuracy:.4f})")
    print(f"bayes  optimal accuracy {result.bayes_optimal:.4f}")
    return 1 if result.failed else 0


# -- parser ---------------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="bayesdrop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scale=False, workers=False):
        p.add_argument("--seed", type=int, help="root seed; every component seed derives from it")
        p.add_argument("--out-dir", default=".", help="directory for outputs (created if missing)")
        p.add_argument("--config", help="flat JSON settings file, or a manifest from an earlier run")
        if scale:
            p.add_argument("--scale", choices=sorted(ev.SCALE_DATA), help="smoke or paper-sized data")
        if workers:
            p.add_argument("--workers", type=int, help="parallel grid-cell workers")

    g = sub.add_parser("gen-data", help="write train/valid/test CSVs")
    common(g, scale=True)
    g.add_argument("--n-informative", type=int)
    g.add_argument("--n-noise", type=int)
    g.add_argument("--mean-shift", type=float)
    g.add_argument("--feature-std", type=float)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-valid", type=int)
    g.add_argument("--n-test", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one logistic regression")
    common(t)
    t.add_argument("--algorithm", choices=[a for a in ALGORITHMS if a != "grouped"])
    t.add_argument("--data", help="training CSV or a directory holding train.csv")
    for name in ("a", "b", "c", "d"):
        t.add_argument(f"--{name}", type=float, help=f"step-size schedule constant {name}")
    t.add_argument("--delta", type=_parse_delta, help="regularizer weight: a number, '1/n' (inverse training size) or '1/t'")
    t.add_argument("--iterations", type=int)
    t.add_argument("--dropout-rate", type=float, help="rate for fixed dropout")
    t.add_argument("--initial-keep-prob", type=float)
    t.add_argument("--baseline", type=_bool, help="subtract a running-mean baseline (true/false)")
    t.add_argument("--baseline-decay", type=float)
    t.add_argument("--minibatch-size", type=int)
    t.add_argument("--fit-bias", type=_bool)
    t.add_argument("--progress-every", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a trained checkpoint")
    common(e)
    e.add_argument("--model", help="model.txt or a train output directory")
    e.add_argument("--mask", help="mask.txt (defaults to the one beside model.txt)")
    e.add_argument("--data", help="CSV or a directory holding test.csv")
    e.add_argument("--predictor", choices=["plain", "expected_mask", "gaussian", "enumerate", "monte_carlo"])
    e.add_argument("--samples", type=int, help="samples for the monte_carlo predictor")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="grid search and compare mle, fixed, uor and for")
    common(x, scale=True, workers=True)
    x.add_argument("--grid", choices=["best", "full"], help="documented best cells or the full grid")
    x.add_argument("--iterations", type=int, help="training steps per cell")
    x.add_argument("--delta", type=_parse_delta)
    x.add_argument("--baseline", type=_bool)
    x.add_argument("--minibatch-size", type=int)
    x.add_argument("--repeats", type=int, help="extra test-set reruns of the chosen cell")
    x.add_argument("--algorithms", help="comma-separated subset of mle,fixed,uor,for")
    x.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
