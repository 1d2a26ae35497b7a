"""Command-line interface.

Four commands — fit, train, bench, replay — each writing its artifacts
plus a run manifest into one output directory.  The manifest records the
fully resolved configuration and seeds, so `releaseflow replay
manifest.json` reproduces a run byte-for-byte on the same platform.

Exit codes: 0 success, 1 invalid input, 2 non-convergence, 3 numerical
divergence.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, backend, bench, classical, dataset, pinn, uq
from .errors import ReleaseflowError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_CONVERGENCE = 2
EXIT_DIVERGED = 3

_OUT_ENV = "RELEASEFLOW_OUT"
_DEFAULT_OUT = "releaseflow_out"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI reserves 2 for
    non-convergence, so usage problems are remapped to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_out(sp):
    sp.add_argument(
        "--out", default=None, metavar="DIR",
        help=f"output directory (default: ${_OUT_ENV} or ./{_DEFAULT_OUT})")


def _add_seed(sp):
    sp.add_argument("--seed", type=int, default=0,
                    help="base random seed (default: 0)")


def _add_data_dir(sp):
    sp.add_argument(
        "--data-dir", default=None, metavar="DIR",
        help="directory holding flat.csv, wrinkled_1d.csv, crumpled_2d.csv "
             "(default: shipped synthetic films)")


def _add_jobs(sp):
    sp.add_argument("--jobs", type=int, default=1,
                    help="max parallel training jobs (default: 1)")


def build_parser():
    p = _Parser(prog="releaseflow",
                description="Drug-release curves: classical kinetic fits, "
                            "physics-informed networks, uncertainty bands.")
    p.add_argument("--version", action="version",
                   version=f"releaseflow {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    fit = sub.add_parser(
        "fit", help="fit one classical kinetic model to a curve CSV")
    fit.add_argument("--model", required=True,
                     help="fick | higuchi | peppas")
    fit.add_argument("--data", required=True, metavar="CSV",
                     help="release-curve CSV (time,fraction rows)")
    fit.add_argument("--max-iter", type=int, default=500,
                     help="Levenberg-Marquardt iteration cap (default: 500)")
    _add_out(fit)
    fit.set_defaults(func=cmd_fit)

    tr = sub.add_parser(
        "train", help="train one PINN on a film or curve CSV")
    tr.add_argument("--data", default=None, metavar="CSV",
                    help="release-curve CSV (default: use --film)")
    tr.add_argument("--film", default="flat",
                    help="shipped film when no --data: flat | wrinkled_1d | "
                         "crumpled_2d (default: flat)")
    tr.add_argument("--epochs", type=int, default=2500,
                    help="Adam epochs (default: 2500)")
    tr.add_argument("--colloc", type=int, default=10000,
                    help="collocation points (default: 10000)")
    tr.add_argument("--d", type=float, default=0.01,
                    help="diffusivity: fixed value, or initial value with "
                         "--learn-d (default: 0.01)")
    tr.add_argument("--learn-d", action="store_true",
                    help="treat the diffusivity as a trainable parameter")
    _add_seed(tr)
    _add_out(tr)
    tr.set_defaults(func=cmd_train)

    be = sub.add_parser("bench", help="run a benchmark protocol")
    bsub = be.add_subparsers(dest="protocol", metavar="PROTOCOL",
                             required=True)

    bc = bsub.add_parser(
        "comparison", help="classical models vs one PINN per film")
    _add_data_dir(bc)
    bc.add_argument("--epochs", type=int, default=None,
                    help="override PINN epochs (default: 2500)")
    bc.add_argument("--colloc", type=int, default=None,
                    help="override collocation points (default: 10000)")
    _add_seed(bc)
    _add_jobs(bc)
    _add_out(bc)
    bc.set_defaults(func=cmd_bench_comparison)

    bn = bsub.add_parser(
        "noise", help="ensemble and BPINN uncertainty bands on noisy data")
    _add_data_dir(bn)
    bn.add_argument("--members", type=int, default=50,
                    help="ensemble size (default: 50)")
    bn.add_argument("--sigma", type=float, default=0.1,
                    help="Gaussian noise level (default: 0.1)")
    bn.add_argument("--passes", type=int, default=100,
                    help="MC-dropout forward passes (default: 100)")
    bn.add_argument("--hmc", action="store_true",
                    help="sample the BPINN by HMC instead of MC dropout")
    bn.add_argument("--epochs", type=int, default=None,
                    help="override member/BPINN epochs "
                         "(default: 5000 members, 10000 BPINN)")
    bn.add_argument("--colloc", type=int, default=None,
                    help="override collocation points (default: 10000)")
    _add_seed(bn)
    _add_jobs(bn)
    _add_out(bn)
    bn.set_defaults(func=cmd_bench_noise)

    bl = bsub.add_parser(
        "limited", help="held-out RMSE when training on the first n points")
    _add_data_dir(bl)
    bl.add_argument("--threshold", type=float, default=0.05,
                    help="RMSE threshold defining the minimal n "
                         "(default: 0.05)")
    bl.add_argument("--epochs", type=int, default=None,
                    help="override PINN epochs (default: 2000)")
    bl.add_argument("--colloc", type=int, default=None,
                    help="override collocation points (default: 1000)")
    _add_seed(bl)
    _add_jobs(bl)
    _add_out(bl)
    bl.set_defaults(func=cmd_bench_limited)

    rp = sub.add_parser(
        "replay", help="re-run a recorded manifest, reproducing its outputs")
    rp.add_argument("manifest", metavar="MANIFEST",
                    help="manifest.json from a previous run")
    _add_out(rp)
    rp.set_defaults(func=cmd_replay)

    return p


# --- manifest bookkeeping ---------------------------------------------------

def _resolve_out(args):
    out = args.out or os.environ.get(_OUT_ENV) or _DEFAULT_OUT
    return Path(out)


def _run(args, command, inputs, config, body):
    """Execute `body(out_dir)` and write manifest.json win or lose."""
    out_dir = _resolve_out(args)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"releaseflow: error: cannot create {out_dir}: {err}",
              file=sys.stderr)
        return EXIT_INVALID
    manifest = {
        "tool": "releaseflow",
        "version": __version__,
        "command": command,
        "backend": backend.name(),
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "out_dir": str(out_dir.resolve()),
        "config": config,
    }
    started = time.monotonic()
    code = EXIT_OK
    err_msg = None
    try:
        code = body(out_dir) or EXIT_OK
    except pinn.NonFiniteLoss as err:
        err_msg, code = str(err), EXIT_DIVERGED
    except uq.DivergentTrajectory as err:
        err_msg, code = str(err), EXIT_DIVERGED
    except (ReleaseflowError, OSError, ValueError, KeyError, TypeError) as err:
        err_msg, code = str(err), EXIT_INVALID
    manifest["duration_s"] = round(time.monotonic() - started, 3)
    manifest["exit_code"] = code
    manifest["status"] = "success" if code == EXIT_OK else "failure"
    manifest["error"] = err_msg
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")
    if err_msg is not None:
        print(f"releaseflow: error: {err_msg}", file=sys.stderr)
    return code


def _abspath(value):
    return None if value is None else str(Path(value).resolve())


def _reraise(err):
    """Body for runs whose configuration failed to resolve: the manifest
    still gets written, recording the raw flags and the failure."""
    def body(out_dir):
        raise err
    return body


# --- executors (shared by the flag path and replay) -------------------------

def _load_benchmark_curves(data_dir):
    """Shipped films, or one CSV per film from a directory."""
    if data_dir is None:
        return bench.shipped_curves()
    root = Path(data_dir)
    curves = {}
    for film in bench.FILM_ORDER:
        path = root / f"{film.value}.csv"
        if not path.is_file():
            raise bench.MissingFilm(
                f"no curve file for film {film.value!r}: expected {path}")
        curves[film] = dataset.load_curve(path, film=film)
    return curves


def _exec_fit(inputs, config, out_dir):
    kind = classical.ModelKind.parse(config["model"])
    curve = dataset.load_curve(inputs["data"])
    result = classical.fit(kind, curve, max_iter=config["max_iter"])
    (out_dir / "fit_result.json").write_text(result.to_json() + "\n")
    params = ", ".join(f"{v:.6g}" for v in result.model.params)
    state = "converged" if result.converged else "NOT converged"
    print(f"fit {kind.value}: params=[{params}] mae={result.mae:.6g} "
          f"rmse={result.rmse:.6g} ({state}, {result.iterations} iterations)")
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _exec_train(inputs, config, out_dir):
    cfg = pinn.PinnConfig.from_dict(config["pinn"])
    if inputs.get("data"):
        curve = dataset.load_curve(inputs["data"])
    else:
        film = dataset.FilmType.parse(config["film"])
        curve = bench.shipped_curve(film)
    trained = pinn.train(cfg, curve)
    trained.save(out_dir / "trained_pinn")
    mae, rmse = bench.metrics(curve.fractions, trained.release(curve.times))
    print(f"train: {cfg.epochs} epochs, d={trained.d_value:.6g}, "
          f"mae={mae:.6g}, rmse={rmse:.6g} -> {out_dir / 'trained_pinn'}")
    return EXIT_OK


def _exec_bench_comparison(inputs, config, out_dir):
    curves = _load_benchmark_curves(inputs.get("data_dir"))
    cfg = pinn.PinnConfig.from_dict(config["pinn"])
    report = bench.run_comparison(curves, cfg, n_jobs=config["jobs"])
    report.save_json(out_dir / "comparison.json")
    report.write_csv(out_dir / "comparison.csv")
    wins = ", ".join(f"{film.value}: {report.winner(film)}"
                     for film in bench.FILM_ORDER)
    print(f"bench comparison: winners {wins} -> {out_dir}")
    return EXIT_OK


def _exec_bench_noise(inputs, config, out_dir):
    curves = _load_benchmark_curves(inputs.get("data_dir"))
    ens_cfg = pinn.PinnConfig.from_dict(config["ensemble"])
    bpinn_cfg = pinn.PinnConfig.from_dict(config["bpinn"])
    hmc_cfg = (uq.HmcConfig.from_dict(config["hmc"])
               if config.get("hmc") else None)
    report = bench.run_noise_benchmark(
        curves, ens_cfg, bpinn_cfg, n_members=config["members"],
        noise_sigma=config["sigma"], n_passes=config["passes"],
        hmc_cfg=hmc_cfg, n_jobs=config["jobs"])
    report.save_json(out_dir / "noise_report.json")
    report.write_csvs(out_dir)
    label = report.bpinn_label()
    print(f"bench noise: {config['members']} members, sigma="
          f"{config['sigma']:g}, bpinn={label} -> {out_dir}")
    return EXIT_OK


def _exec_bench_limited(inputs, config, out_dir):
    curves = _load_benchmark_curves(inputs.get("data_dir"))
    cfg = pinn.PinnConfig.from_dict(config["pinn"])
    report = bench.run_limited_data(curves, cfg,
                                    threshold=config["threshold"],
                                    n_jobs=config["jobs"])
    report.save_json(out_dir / "limited_report.json")
    report.write_csv(out_dir / "limited_rmse.csv")
    mins = ", ".join(
        f"{film.value}/pinn: n={report.minimal(film, 'pinn')}"
        for film in bench.FILM_ORDER)
    print(f"bench limited: minimal {mins} -> {out_dir}")
    return EXIT_OK


_EXECUTORS = {
    "fit": _exec_fit,
    "train": _exec_train,
    "bench comparison": _exec_bench_comparison,
    "bench noise": _exec_bench_noise,
    "bench limited": _exec_bench_limited,
}


# --- command handlers -------------------------------------------------------

def cmd_fit(args):
    inputs = {"data": _abspath(args.data)}
    config = {"model": args.model, "max_iter": args.max_iter}
    return _run(args, "fit", inputs, config,
                lambda out: _exec_fit(inputs, config, out))


def cmd_train(args):
    inputs = {"data": _abspath(args.data)}
    raw = {"epochs": args.epochs, "colloc": args.colloc, "d": args.d,
           "learn_d": args.learn_d, "film": args.film}
    try:
        d_mode = (pinn.Learnable(args.d) if args.learn_d
                  else pinn.Fixed(args.d))
        cfg = pinn.PinnConfig(epochs=args.epochs, n_collocation=args.colloc,
                              d_mode=d_mode, seed=args.seed)
    except ValidationError as err:
        return _run(args, "train", inputs, raw, _reraise(err))
    config = {"pinn": cfg.to_dict(),
              "film": None if args.data else args.film}
    return _run(args, "train", inputs, config,
                lambda out: _exec_train(inputs, config, out))


def _override(cfg, args):
    """Apply --epochs/--colloc/--seed on top of a protocol default."""
    updates = {"seed": args.seed}
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.colloc is not None:
        updates["n_collocation"] = args.colloc
    return dataclasses.replace(cfg, **updates)


def cmd_bench_comparison(args):
    inputs = {"data_dir": _abspath(args.data_dir)}
    try:
        cfg = _override(bench.default_comparison_config(), args)
    except ValidationError as err:
        raw = {"epochs": args.epochs, "colloc": args.colloc,
               "jobs": args.jobs}
        return _run(args, "bench comparison", inputs, raw, _reraise(err))
    config = {"pinn": cfg.to_dict(), "jobs": args.jobs}
    return _run(args, "bench comparison", inputs, config,
                lambda out: _exec_bench_comparison(inputs, config, out))


def cmd_bench_noise(args):
    inputs = {"data_dir": _abspath(args.data_dir)}
    try:
        ens_cfg = _override(bench.default_ensemble_config(), args)
        bpinn_cfg = _override(bench.default_bpinn_config(), args)
        if args.hmc:
            bpinn_cfg = dataclasses.replace(bpinn_cfg, p_keep=1.0)
            hmc_cfg = uq.HmcConfig(seed=args.seed)
        else:
            hmc_cfg = None
    except ValidationError as err:
        raw = {"epochs": args.epochs, "colloc": args.colloc,
               "members": args.members, "sigma": args.sigma,
               "passes": args.passes, "hmc": args.hmc, "jobs": args.jobs}
        return _run(args, "bench noise", inputs, raw, _reraise(err))
    config = {"ensemble": ens_cfg.to_dict(), "bpinn": bpinn_cfg.to_dict(),
              "members": args.members, "sigma": args.sigma,
              "passes": args.passes,
              "hmc": hmc_cfg.to_dict() if hmc_cfg else None,
              "jobs": args.jobs}
    return _run(args, "bench noise", inputs, config,
                lambda out: _exec_bench_noise(inputs, config, out))


def cmd_bench_limited(args):
    inputs = {"data_dir": _abspath(args.data_dir)}
    try:
        cfg = _override(bench.default_limited_config(), args)
    except ValidationError as err:
        raw = {"epochs": args.epochs, "colloc": args.colloc,
               "threshold": args.threshold, "jobs": args.jobs}
        return _run(args, "bench limited", inputs, raw, _reraise(err))
    config = {"pinn": cfg.to_dict(), "threshold": args.threshold,
              "jobs": args.jobs}
    return _run(args, "bench limited", inputs, config,
                lambda out: _exec_bench_limited(inputs, config, out))


def cmd_replay(args):
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except OSError as err:
        print(f"releaseflow: error: cannot read manifest: {err}",
              file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as err:
        print(f"releaseflow: error: manifest is not valid JSON: {err}",
              file=sys.stderr)
        return EXIT_INVALID
    try:
        command = manifest["command"]
        inputs = manifest["inputs"]
        config = manifest["config"]
        executor = _EXECUTORS[command]
    except KeyError as err:
        print(f"releaseflow: error: manifest lacks a usable {err} entry",
              file=sys.stderr)
        return EXIT_INVALID
    replay_args = argparse.Namespace(out=args.out, seed=manifest.get("seed"))
    return _run(replay_args, command, inputs, config,
                lambda out: executor(inputs, config, out))


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
