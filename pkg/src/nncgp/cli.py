"""Command-line driver: simulate, fit, predict, evaluate, oracle-check.

Configuration files are flat ``key = value`` text with dotted keys, e.g.::

    data.train = train_level1.csv, train_level2.csv
    model.m = 10
    sampler.n_iter = 5000

Relative paths are resolved against the directory of the config file.
Exit codes: 0 success, 1 user error (bad config or data), 2 internal error
(including a failed oracle check).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import io
from .baselines import combine_levels
from .model import BasisSpec, LevelParams, NNCGPModel
from .sampler import SamplerConfig, run_chain

MODELS = ("nncgp", "single", "combined")


class UserError(Exception):
    pass


# ---------------------------------------------------------------- config parsing
def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


SAMPLER_KEYS = {
    "sampler.n_iter": int, "sampler.burn_in": int, "sampler.thin": int,
    "sampler.mh_step": float, "sampler.seed": int, "sampler.target_accept": float,
    "sampler.adapt": lambda v: v.lower() in ("1", "true", "yes"),
    "sampler.store_latent": lambda v: v.lower() in ("1", "true", "yes"),
    "sampler.conditionals": str, "sampler.progress_every": int,
}
MODEL_KEYS = {
    "model.m": int, "model.trend": str, "model.scale": str,
    "prior.variance": float, "prior.phi_upper": _floats,
    "prior.sigma2_shape": float, "prior.sigma2_rate": float,
    "prior.tau2_shape": float, "prior.tau2_rate": float,
}
LEVEL_FIELDS = {"beta": _floats, "gamma": _floats, "sigma2": float, "phi": _floats, "tau2": float}
SCHEMAS = {
    "simulate": {
        "synth.preset": str, "synth.n": lambda v: [int(x) for x in _floats(v)], "synth.seed": int,
        "synth.bbox": _floats, "synth.holdouts": str, "synth.holdout_level": int,
        "synth.shared_fraction": float, "synth.dense_cap": int,
    },
    "fit": {"data.train": str, **MODEL_KEYS, **SAMPLER_KEYS},
    "predict": {"predict.fit": str, "predict.targets": str, "predict.bbox": _floats,
                "predict.cell": _floats, "predict.level": int, "predict.seed": int,
                "predict.max_draws": int, "predict.quantiles": _floats},
    "evaluate": {"evaluate.predictions": str, "evaluate.test": str, "evaluate.fit": str},
}


def load_config(path, command: str) -> dict:
    """Parse and type-check a flat dotted-key config for ``command``."""
    path = Path(path)
    if not path.is_file():
        raise UserError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise UserError(f"{path}: cannot parse config ({exc})") from None
    schema = SCHEMAS[command]
    out = {"_dir": path.parent, "_sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
    for key, raw in parser["root"].items():
        conv = schema.get(key)
        if conv is None and command == "simulate" and key.startswith("level"):
            head, _, name = key.partition(".")
            if head[5:].isdigit() and name in LEVEL_FIELDS:
                conv = LEVEL_FIELDS[name]
        if conv is None:
            raise UserError(f"{path}: unknown config key '{key}'")
        try:
            out[key] = conv(raw.strip())
        except ValueError:
            raise UserError(f"{path}: bad value for '{key}': {raw!r}") from None
    return out


def _path(cfg: dict, key: str, must_exist: bool = True) -> Path:
    if key not in cfg:
        raise UserError(f"missing required config key '{key}'")
    p = Path(cfg[key])
    p = p if p.is_absolute() else cfg["_dir"] / p
    if must_exist and not p.exists():
        raise UserError(f"'{key}' points to a missing path: {p}")
    return p


def _paths(cfg: dict, key: str) -> list[Path]:
    if key not in cfg:
        raise UserError(f"missing required config key '{key}'")
    out = []
    for item in cfg[key].split(","):
        p = Path(item.strip())
        p = p if p.is_absolute() else cfg["_dir"] / p
        if not p.exists():
            raise UserError(f"'{key}' lists a missing file: {p}")
        out.append(p)
    return out


def _apply_threads():
    value = os.environ.get("NNCGP_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UserError(f"NNCGP_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


# ---------------------------------------------------------------- simulate
def cmd_simulate(args) -> int:
    from .synth import SynthConfig, simulate, table1_config

    cfg = load_config(args.config, "simulate")
    seed = args.seed if args.seed is not None else cfg.get("synth.seed", 0)
    extra = {}
    for key, name in (("synth.holdout_level", "holdout_level"),
                      ("synth.shared_fraction", "shared_fraction"), ("synth.dense_cap", "dense_cap")):
        if key in cfg:
            extra[name] = cfg[key]
    if "synth.bbox" in cfg:
        b = cfg["synth.bbox"]
        if len(b) % 2:
            raise UserError("synth.bbox needs lo and hi corners (2*d numbers)")
        extra["bbox"] = (b[: len(b) // 2], b[len(b) // 2:])
    if "synth.holdouts" in cfg:
        boxes = []
        for chunk in cfg["synth.holdouts"].split(";"):
            if not chunk.strip():
                continue
            v = _floats(chunk)
            if len(v) % 2:
                raise UserError(f"synth.holdouts box '{chunk}' needs 2*d numbers")
            boxes.append((v[: len(v) // 2], v[len(v) // 2:]))
        extra["holdouts"] = boxes

    preset = cfg.get("synth.preset")
    try:
        if preset == "table1":
            n = cfg.get("synth.n", [500])[0]
            sc = table1_config(n=n, seed=seed, **extra)
        elif preset is None:
            if "synth.n" not in cfg:
                raise UserError("missing required config key 'synth.n'")
            params = []
            for t in range(len(cfg["synth.n"])):
                pre = f"level{t + 1}."
                try:
                    vals = {f: cfg[pre + f] for f in ("beta", "sigma2", "phi", "tau2")}
                except KeyError as exc:
                    raise UserError(f"missing required config key '{exc.args[0]}'") from None
                vals["gamma"] = cfg.get(pre + "gamma", [] if t == 0 else [1.0])
                params.append(LevelParams(**vals))
            sc = SynthConfig(n=cfg["synth.n"], params=params, seed=seed, **extra)
        else:
            raise UserError(f"unknown synth.preset '{preset}' (expected 'table1')")
        res = simulate(sc)
    except ValueError as exc:
        raise UserError(str(exc)) from None

    out = io.ensure_dir(args.out)
    for ds in res.train:
        io.write_dataset(out / f"train_level{ds.level}.csv", ds)
    if res.test is not None:
        io.write_dataset(out / "test.csv", res.test)
    (out / "truth.json").write_text(json.dumps(res.metadata, indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- fit
def _build(cfg: dict, model_kind: str):
    datasets = [io.read_dataset(p, t + 1) for t, p in enumerate(_paths(cfg, "data.train"))]
    if model_kind == "single":
        last = datasets[-1]
        datasets = [type(last)(1, last.coords, last.values)]
    elif model_kind == "combined":
        datasets = [combine_levels(datasets)]
    basis = BasisSpec(cfg.get("model.trend", "constant"), cfg.get("model.scale", "constant"))
    model = NNCGPModel(datasets, m=cfg.get("model.m", 10), bases=[basis] * len(datasets))
    priors = model.default_priors(phi_upper=cfg.get("prior.phi_upper"),
                                  variance=cfg.get("prior.variance", 1e4))
    for pr in priors:
        for key in ("sigma2_shape", "sigma2_rate", "tau2_shape", "tau2_rate"):
            if f"prior.{key}" in cfg:
                setattr(pr, key, cfg[f"prior.{key}"])
    return model, priors


def _sampler_config(cfg: dict, seed) -> SamplerConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("sampler.")}
    if seed is not None:
        kw["seed"] = seed
    return SamplerConfig(**kw)


def cmd_fit(args) -> int:
    cfg = load_config(args.config, "fit")
    try:
        model, priors = _build(cfg, args.model)
        sc = _sampler_config(cfg, args.seed)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    trace = run_chain(model, priors, sc)
    out = io.ensure_dir(args.out)
    for t in range(trace.T):
        io.write_trace_csv(out / f"trace_level{t + 1}.csv", trace, t)
    acc = {f"level{t + 1}": {"accepted": int(trace.accepted[t]), "proposed": int(trace.proposed[t]),
                             "rate": float(trace.acceptance_rate[t]),
                             "final_step": np.asarray(trace.mh_step[t]).tolist()}
           for t in range(trace.T)}
    (out / "acceptance.json").write_text(json.dumps(acc, indent=2) + "\n", encoding="utf-8")
    io.save_trace(out / "trace.npz", trace)
    manifest = {
        "model": args.model,
        "seed": sc.seed,
        "config_sha256": cfg["_sha256"],
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()
                   if not k.startswith("_")},
        "config_dir": str(Path(cfg["_dir"]).resolve()),
        "n_retained": len(trace),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 0


def load_fit(fit_dir):
    """Rebuild the model and trace written by ``fit``."""
    fit_dir = Path(fit_dir)
    man_path = fit_dir / "manifest.json"
    if not man_path.is_file() or not (fit_dir / "trace.npz").is_file():
        raise UserError(f"no fitted trace in {fit_dir} (expected manifest.json and trace.npz)")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    cfg = dict(manifest["config"])
    cfg["_dir"] = Path(manifest["config_dir"])
    model, _ = _build(cfg, manifest["model"])
    try:
        return io.load_trace(fit_dir / "trace.npz", model)
    except (ValueError, KeyError) as exc:
        raise UserError(f"unreadable trace in {fit_dir}: {exc}") from None


# ---------------------------------------------------------------- predict / evaluate
def cmd_predict(args) -> int:
    from .predict import grid_centers, predict

    cfg = load_config(args.config, "predict")
    trace = load_fit(_path(cfg, "predict.fit"))
    if "predict.targets" in cfg:
        header, data = io.read_table(_path(cfg, "predict.targets"))
        dim = trace.model.dim
        if header[:dim] != io.coord_names(dim):
            raise UserError(f"targets file must start with columns {io.coord_names(dim)}")
        targets = data[:, :dim]
    elif "predict.bbox" in cfg and "predict.cell" in cfg:
        b = cfg["predict.bbox"]
        try:
            targets = grid_centers((b[: len(b) // 2], b[len(b) // 2:]), cfg["predict.cell"])
        except ValueError as exc:
            raise UserError(str(exc)) from None
    else:
        raise UserError("predict needs 'predict.targets' or both 'predict.bbox' and 'predict.cell'")
    seed = args.seed if args.seed is not None else cfg.get("predict.seed", 0)
    try:
        res = predict(trace, targets, cfg.get("predict.level"),
                      quantiles=cfg.get("predict.quantiles", (0.025, 0.975)),
                      seed=seed, max_draws=cfg.get("predict.max_draws"))
    except ValueError as exc:
        raise UserError(str(exc)) from None
    out = Path(args.out)
    if out.suffix != ".csv":
        out = io.ensure_dir(out) / "predictions.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    io.write_predictions(out, res)
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    cfg = load_config(args.config, "evaluate")
    pred = io.read_predictions(_path(cfg, "evaluate.predictions"))
    header, test = io.read_table(_path(cfg, "evaluate.test"))
    for col in ("mean", "q025", "q975"):
        if col not in pred:
            raise UserError(f"predictions file lacks column '{col}'")
    if not header or header[-1] != "value":
        raise UserError("test file must end with a 'value' column")
    if test.shape[0] != pred["mean"].shape[0]:
        raise UserError(f"{test.shape[0]} test rows but {pred['mean'].shape[0]} predictions")
    dim = len(header) - 1
    names = io.coord_names(dim)
    if header[:-1] != names or any(n not in pred for n in names):
        raise UserError(f"coordinate columns differ: test {header[:-1]}, expected {names}")
    coords = np.column_stack([pred[n] for n in names])
    if not np.allclose(coords, test[:, :dim], rtol=0, atol=1e-12):
        raise UserError("prediction and test coordinates do not line up row by row")
    trace = load_fit(_path(cfg, "evaluate.fit")) if "evaluate.fit" in cfg else None
    try:
        report = evaluate(pred["mean"], pred["q025"], pred["q975"], test[:, -1], trace)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    text = report.to_json() + "\n"
    if args.out:
        out = Path(args.out)
        if out.suffix != ".json":
            out = io.ensure_dir(out) / "report.json"
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_oracle_check(args) -> int:
    from .oracle import run_oracle_checks

    seed = 0 if args.seed is None else args.seed
    try:
        checks = run_oracle_checks(n=args.n, seed=seed, corrupt=args.corrupt)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in checks) else 2


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "oracle-check": cmd_oracle_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nncgp", description="Nearest-neighbor co-kriging GP toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--model", choices=MODELS, default="nncgp")
        if name == "oracle-check":
            p.add_argument("--config", default=None)
            p.add_argument("--n", type=int, default=30, help="number of sites")
            p.add_argument("--corrupt", action="store_true", help="negative control: perturb one factor")
            p.add_argument("--out", default=None)
        else:
            p.add_argument("--config", required=True)
            p.add_argument("--out", required=name != "evaluate", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limiter = _apply_threads()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
