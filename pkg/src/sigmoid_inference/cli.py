"""Command-line entry point: simulate, train-solver, infer, report, pipeline.

Exit codes: 0 success, 2 configuration error, 3 artifact mismatch,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import PRESETS, ConfigError, RunConfig, load_config, preset
from .datagen import Dataset, generate_dataset, mask_components
from .evaluation import write_report
from .hyperpinn import HyperPinnModel, TrainingDiverged, train_hyperpinn
from .systems import IntegrationError, make_system
from .wgan import GanDiverged, InferenceResult, train_wgan

log = logging.getLogger("sigmoid_inference")

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_NUMERICAL = 0, 2, 3, 4


class ArtifactMismatch(RuntimeError):
    pass


def _cache_dir():
    return os.environ.get("SIGMOID_CACHE_DIR") or None


def _parse_epochs(text):
    """'N' -> (N, N); 'P,G' -> (P, G)."""
    if text is None:
        return None, None
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"--epochs expects N or PINN,GAN, got {text!r}") from None
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) == 2:
        return tuple(parts)
    raise ConfigError(f"--epochs expects at most two values, got {text!r}")


def _resolve_config(args, stage=None) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    elif args.preset:
        cfg = preset(args.preset, 0 if args.seed is None else args.seed)
    else:
        raise ConfigError("one of --config or --preset is required")
    pe, ge = _parse_epochs(getattr(args, "epochs", None))
    if stage == "pinn":
        ge = None
    elif stage == "gan":
        pe = None
    return cfg.with_epochs(pe, ge)


def _out(args, cfg):
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _simulate(cfg: RunConfig) -> Dataset:
    ds = generate_dataset(cfg.scenario)
    if cfg.keep_components is not None:
        ds = mask_components(ds, cfg.keep_components)
    return ds


def _train(cfg: RunConfig, beta=None) -> HyperPinnModel:
    pinn = cfg.pinn
    if beta is not None:
        pinn = type(pinn)(**{**pinn.to_dict(), "beta": float(beta)})
    return train_hyperpinn(make_system(cfg.system), pinn, cache_dir=_cache_dir())


def _check_pair(model: HyperPinnModel, ds: Dataset):
    if model.system_name != ds.system_name:
        raise ArtifactMismatch(f"model is for {model.system_name!r} but dataset is for {ds.system_name!r}")
    if ds.schedule.times[-1] > model.horizon * (1 + 1e-12):
        raise ArtifactMismatch("dataset times extend beyond the model horizon")


def _infer(cfg: RunConfig, model, ds, lambda_e=None) -> InferenceResult:
    _check_pair(model, ds)
    gan = cfg.gan if lambda_e is None else type(cfg.gan)(**{**cfg.gan.to_dict(), "lambda_e": lambda_e})
    system = make_system(cfg.system)
    return train_wgan(model, ds, gan, param_names=system.param_names, true_params=system.true_params)


def _sweep_values(text):
    if not text:
        return None
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"--lambda-e-sweep expects comma-separated numbers, got {text!r}") from None


def _report(out, result: InferenceResult, ds: Dataset, extra=None):
    system = make_system(result.system_name)
    from .evaluation import eval_grid
    info = {"inference": {"config": result.config, "seed": result.seed, "wall_time": result.wall_time,
                          "lambda_e": result.lambda_e}}
    info.update(extra or {})
    return write_report(out, system, result.params, result.param_names,
                        grid=eval_grid(system, (extra or {}).get("eval_points", 161)),
                        run_info=info, dataset=ds)


def _write_history(path, history, keys):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in history:
            w.writerow([format(float(rec[k]), ".17g") if k != "epoch" else rec[k] for k in keys])


def _load(cls, path, what):
    if path is None:
        raise ConfigError(f"--{what} is required")
    try:
        return cls.load(path)
    except FileNotFoundError:
        raise ArtifactMismatch(f"{what} file not found: {path}") from None
    except (KeyError, ValueError, json.JSONDecodeError) as err:
        raise ArtifactMismatch(f"{what} file {path} is not readable: {err}") from None


def cmd_simulate(args):
    cfg = _resolve_config(args)
    out = _out(args, cfg)
    ds = _simulate(cfg)
    ds.save(out / "dataset.json")
    ds.write_csv(out / "dataset.csv")
    print(f"flat_dim={ds.flat_dim} N_o={ds.n_replicates} -> {out / 'dataset.json'}")


def cmd_train_solver(args):
    cfg = _resolve_config(args, "pinn")
    out = _out(args, cfg)
    model = _train(cfg, args.beta)
    model.save(out / "model.json")
    _write_history(out / "loss_history.csv", model.history, ["epoch", "loss", "data", "physics"])
    print(f"final loss {model.history[-1]['loss']:.6g} -> {out / 'model.json'}")


def cmd_infer(args):
    cfg = _resolve_config(args, "gan")
    out = _out(args, cfg)
    model = _load(HyperPinnModel, args.model, "model")
    ds = _load(Dataset, args.dataset, "dataset")
    sweep = _sweep_values(args.lambda_e_sweep)
    if sweep is None:
        res = _infer(cfg, model, ds)
        res.save(out / "result.json")
        res.write_params_csv(out / "param_draws.csv")
        print(f"parameter mean {res.params.mean(axis=0)} -> {out / 'result.json'}")
        return
    for lam in sweep:
        sub = out / f"lambda_e_{lam:g}"
        sub.mkdir(parents=True, exist_ok=True)
        res = _infer(cfg, model, ds, lam)
        res.save(sub / "result.json")
        res.write_params_csv(sub / "param_draws.csv")
        print(f"lambda_e={lam:g}: parameter mean {res.params.mean(axis=0)} -> {sub / 'result.json'}")


def cmd_report(args):
    res = _load(InferenceResult, args.result, "result")
    ds = _load(Dataset, args.dataset, "dataset")
    if res.system_name != ds.system_name:
        raise ArtifactMismatch("result and dataset are for different systems")
    out = Path(args.out or "report")
    rep = _report(out, res, ds)
    print("rmse " + " ".join(f"{n}={v:.4g}" for n, v in zip(rep["rmse"].component_names, rep["rmse"].values)))


def cmd_pipeline(args):
    cfg = _resolve_config(args)
    out = _out(args, cfg)
    cfg.save(out / "config.json")
    timings = {}
    t0 = time.perf_counter()
    ds = _simulate(cfg)
    ds.save(out / "dataset.json")
    timings["simulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = _train(cfg)
    model.save(out / "model.json")
    _write_history(out / "loss_history.csv", model.history, ["epoch", "loss", "data", "physics"])
    timings["train_solver"] = time.perf_counter() - t0

    sweep = _sweep_values(args.lambda_e_sweep) or [cfg.gan.lambda_e]
    best = None
    for lam in sweep:
        t0 = time.perf_counter()
        res = _infer(cfg, model, ds, lam)
        timings[f"infer_lambda_e_{lam:g}"] = time.perf_counter() - t0
        target = out if len(sweep) == 1 else out / f"lambda_e_{lam:g}"
        target.mkdir(parents=True, exist_ok=True)
        res.save(target / "result.json")
        res.write_params_csv(target / "param_draws.csv")
        extra = {"run_config": cfg.to_dict(), "master_seed": cfg.seed, "wall_times": timings,
                 "eval_points": cfg.eval_points,
                 "solver": {"training_set_hash": model.metadata.get("training_set_hash")}}
        rep = _report(target, res, ds, extra)
        score = float(rep["rmse"].values.mean())
        if best is None or score < best[0]:
            best = (score, lam, res)
    if len(sweep) > 1:
        # the top-level report uses the lambda_e with the lowest mean trajectory RMSE
        _, lam, res = best
        res.save(out / "result.json")
        _report(out, res, ds, {"run_config": cfg.to_dict(), "master_seed": cfg.seed, "wall_times": timings,
                               "eval_points": cfg.eval_points, "selected_lambda_e": lam})
    print(f"pipeline finished -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigmoid-infer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, epochs=True):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--preset", choices=PRESETS, help="named configuration")
        p.add_argument("--seed", type=int, help="master seed (stage seeds are derived from it)")
        p.add_argument("--out", help="output directory")
        if epochs:
            p.add_argument("--epochs", help="epoch override: N, or PINN,GAN for the pipeline")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p, epochs=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-solver", help="train the HyperPINN emulator")
    common(p)
    p.add_argument("--beta", type=float, help="override the physics-loss weight")
    p.set_defaults(func=cmd_train_solver)

    p = sub.add_parser("infer", help="run WGAN-GP inference")
    common(p)
    p.add_argument("--model", help="trained model file")
    p.add_argument("--dataset", help="dataset file")
    p.add_argument("--lambda-e-sweep", help="comma-separated lambda_e values, one result each")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="evaluate an inference result")
    p.add_argument("--result", help="inference result file")
    p.add_argument("--dataset", help="dataset file")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="simulate, train, infer and report in one go")
    common(p)
    p.add_argument("--lambda-e-sweep", help="comma-separated lambda_e values; best by RMSE is reported")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactMismatch as err:
        print(f"artifact mismatch: {err}", file=sys.stderr)
        return EXIT_MISMATCH
    except (TrainingDiverged, GanDiverged, IntegrationError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
