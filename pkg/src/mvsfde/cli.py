"""Command line entry point: config ingestion, experiment dispatch and persistence.

Exit codes: 0 success, 1 a verdict failed, 2 the program failed (bad config,
blow-up, I/O error).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, parse_config, serialize
from .experiments import (
    Certificate,
    ChaosConfig,
    LVCheckConfig,
    StabilityConfig,
    chaos_experiment,
    lv_check_experiment,
    quadratic_lyapunov,
    stability_experiment,
)
from .experiments._parallel import worker_count
from .experiments.stability import verdict_failed as stability_failed
from .integrator import BlowUpError, ParticleSystem, run
from .measures import RateParams
from .output import line_plot_svg, atomic_write_text, write_csv, write_json

EXIT_OK, EXIT_VERDICT, EXIT_ERROR = 0, 1, 2
EXPERIMENTS = ("simulate", "chaos", "stability", "lv-check")


class _Outputs:
    """Collects every file written so the manifest can list them."""

    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.outputs.dir)
        self.cfg = cfg
        self.written: list[str] = []

    def _add(self, path: Path):
        self.written.append(path.relative_to(self.dir).as_posix())

    def csv(self, name, header, rows):
        if self.cfg.outputs.emit_csv:
            self._add(write_csv(self.dir / name, header, rows))

    def json(self, name, obj):
        if self.cfg.outputs.emit_json:
            self._add(write_json(self.dir / name, obj))

    def svg(self, name, text):
        if self.cfg.outputs.emit_svg:
            self._add(atomic_write_text(self.dir / name, text))


def _moment_label(q: float) -> str:
    return f"m{int(q)}" if float(q).is_integer() else f"m{q:g}"


# ---------------------------------------------------------------- pipelines


def _simulate(cfg: RunConfig, out: _Outputs, threads: int) -> int:
    from .experiments._parallel import parallel_map

    model = cfg.build_model()
    num = cfg.numerics
    qs = [float(q) for q in num.moments]
    n_paths = cfg.outputs.paths

    def one(r):
        sys0 = ParticleSystem.create(model, num.n, num.dt, cfg.seed, initial=cfg.initial.sampler(), replication_index=r)
        return run(sys0, num.horizon, num.record_stride, moments=qs, record_paths=n_paths or None)

    recs = parallel_map(one, range(num.replications), threads)
    times = recs[0].times
    mean_tracks = {q: np.mean([rec.moments[q] for rec in recs], axis=0) for q in qs}
    mcols = [_moment_label(q) for q in qs]

    def path_cols(rec):
        if rec.paths is None:
            return [], []
        cols = [f"p{k}_{c}" for k in range(rec.paths.shape[0]) for c in range(rec.paths.shape[2])]
        flat = rec.paths.transpose(1, 0, 2).reshape(len(rec.times), -1)
        return cols, flat

    pcols, pflat = path_cols(recs[0])
    rows = [[t] + [mean_tracks[q][i] for q in qs] + (list(pflat[i]) if pcols else []) for i, t in enumerate(times)]
    out.csv("simulate.csv", ["t"] + mcols + pcols, rows)
    if num.replications > 1:
        for r, rec in enumerate(recs):
            cols, flat = path_cols(rec)
            rrows = [[t] + [rec.moments[q][i] for q in qs] + (list(flat[i]) if cols else []) for i, t in enumerate(times)]
            out.csv(f"simulate_r{r:03d}.csv", ["t"] + mcols + cols, rrows)
    report = {
        "experiment": "simulate",
        "model": model.name,
        "params": model.params,
        "n": num.n,
        "dt": num.dt,
        "horizon": num.horizon,
        "replications": num.replications,
        "seed": cfg.seed,
        "final_moments": {_moment_label(q): float(mean_tracks[q][-1]) for q in qs},
        "initial_moments": {_moment_label(q): float(mean_tracks[q][0]) for q in qs},
        "expectation": "mean over replications and particles",
    }
    out.json("report.json", report)
    series = [(f"E|X(t)|^{q:g}", times, mean_tracks[q]) for q in qs]
    out.svg("moments.svg", line_plot_svg(series, "moment decay", "t", "moment (log scale)", logy=True))
    return EXIT_OK


def _chaos(cfg: RunConfig, out: _Outputs, threads: int) -> int:
    block, num = cfg.chaos, cfg.numerics
    rp = block.rate_params
    ccfg = ChaosConfig(
        model=cfg.build_model(),
        sizes=tuple(block.sizes),
        reference_size=block.reference_size,
        horizon=num.horizon,
        step=num.dt,
        replications=num.replications,
        q=block.q,
        rate_params=RateParams(rp.q, rp.p, rp.d),
        seed=cfg.seed,
        initial=cfg.initial.sampler(),
        slope_band=tuple(block.slope_band),
        w_method=block.w_method,
    )
    rep = chaos_experiment(ccfg, threads)
    out.json("report.json", {"experiment": "chaos", **rep.to_dict()})
    out.csv(
        "chaos.csv",
        ["n", "err_sup", "err_w", "epsilon"],
        [[n, a, b, e] for n, a, b, e in zip(rep.sizes, rep.err_sup, rep.err_w, rep.epsilon)],
    )
    for r in range(num.replications):
        out.csv(
            f"chaos_r{r:03d}.csv",
            ["n", "err_sup", "err_w"],
            [[n, rep.err_sup_by_replication[r][i], rep.err_w_by_replication[r][i]] for i, n in enumerate(rep.sizes)],
        )
    # scale epsilon to meet the sup error at the smallest size so the slopes compare visually
    eps = np.asarray(rep.epsilon)
    scale = rep.err_sup[0] / eps[0] if eps[0] > 0 and rep.err_sup[0] > 0 else 1.0
    series = [
        ("err_sup", rep.sizes, rep.err_sup),
        ("err_W", rep.sizes, rep.err_w),
        ("epsilon_N (scaled)", rep.sizes, scale * eps),
    ]
    out.svg("chaos.svg", line_plot_svg(series, "chaos error vs N", "N", "error", logx=True, logy=True))
    return EXIT_OK if rep.slope_in_band else EXIT_VERDICT


def _certificate(block, q: float, delay: float) -> Certificate:
    lam, alpha, tau = block.resolve(delay)
    return Certificate(lam=lam, alpha=alpha, tau=tau, q=q, c=tuple(block.c))


def _stability(cfg: RunConfig, out: _Outputs, threads: int) -> int:
    from .config import StabilityBlock

    block = cfg.stability or StabilityBlock()
    num = cfg.numerics
    model = cfg.build_model()
    cert = None if block.certificate is None else _certificate(block.certificate, block.q, model.delay)
    scfg = StabilityConfig(
        model=model,
        sizes=tuple(block.sizes or [num.n]),
        horizon=num.horizon,
        step=num.dt,
        replications=num.replications,
        q=block.q,
        seed=cfg.seed,
        fit_window=block.fit_window,
        record_stride=num.record_stride,
        initial=cfg.initial.sampler(),
        certificate=cert,
        tolerance=block.tolerance,
        slack=block.slack,
    )
    rep = stability_experiment(scfg, threads)
    out.json("report.json", {"experiment": "stability", **rep.to_dict()})
    label = _moment_label(block.q)
    header = ["t"] + [f"{label}_n{r.n}" for r in rep.results]
    out.csv("stability.csv", header, [[t] + [r.moment[i] for r in rep.results] for i, t in enumerate(rep.times)])
    for k in range(num.replications):
        out.csv(
            f"stability_r{k:03d}.csv",
            header,
            [[t] + [r.moment_by_replication[k][i] for r in rep.results] for i, t in enumerate(rep.times)],
        )
    series = [(f"N={r.n}", rep.times, r.moment) for r in rep.results]
    if cert is not None:
        first = rep.results[0]
        env = cert.envelope_factor * first.initial_sup_moment * np.exp(-rep.kappa_cert * np.asarray(rep.times))
        series.append(("certified envelope", rep.times, env))
    out.svg("stability.svg", line_plot_svg(series, "moment decay", "t", f"E|X(t)|^{block.q:g}", logy=True))
    return EXIT_VERDICT if any(stability_failed(r.verdict) for r in rep.results) else EXIT_OK


def _lv_check(cfg: RunConfig, out: _Outputs, threads: int) -> int:
    block, num = cfg.lyapunov, cfg.numerics
    model = cfg.build_model()
    cert = _certificate(block.certificate, block.q, model.delay)
    lcfg = LVCheckConfig(
        model=model,
        lyapunov=quadratic_lyapunov(),
        n=num.n,
        horizon=num.horizon,
        step=num.dt,
        seed=cfg.seed,
        alpha=cert.alpha,
        lam=cert.lam,
        q=block.q,
        c=cert.c,
        check_times=block.check_times,
        replications=num.replications,
        initial=cfg.initial.sampler(),
        mean_square_bound=block.mean_square_bound,
        pair_samples=block.pair_samples,
    )
    rep = lv_check_experiment(lcfg, threads)
    out.json("report.json", {"experiment": "lv-check", **rep.to_dict()})
    rows = []
    for r, rz in enumerate(rep.razumikhin):
        for i, t in enumerate(rz.times):
            rows.append([r, t, rz.statuses[i], rz.v_now[i], rz.v_window_max[i], rz.estimates[i],
                         rz.std_errors[i], rz.thresholds[i], rz.margins[i]])
    out.csv(
        "lv_check.csv",
        ["replication", "t", "status", "v_now", "v_window_max", "estimate", "std_error", "threshold", "margin"],
        rows,
    )
    if rep.bound_checks:
        out.csv(
            "lv_bound.csv",
            ["replication", "t", "estimate", "std_error", "bound", "passed"],
            [[b["replication"], b["t"], b["estimate"], b["std_error"], b["bound"], b["passed"]] for b in rep.bound_checks],
        )
    return EXIT_OK if rep.verdict == "razumikhin-confirmed" else EXIT_VERDICT


PIPELINES = {"simulate": _simulate, "chaos": _chaos, "stability": _stability, "lv-check": _lv_check}


def _manifest(cfg: RunConfig, out: _Outputs, status: int, elapsed: float, error: str | None):
    import scipy
    import pydantic

    return {
        "config": json.loads(serialize(cfg)),
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "experiment": cfg.experiment,
        "exit_status": status,
        "error": error,
        "outputs": sorted(out.written),
        "versions": {
            "mvsfde": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.__version__,
        },
        "threads": worker_count(),
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": elapsed,
    }


def dispatch(cfg: RunConfig, threads: int | None = None) -> int:
    """Run the configured pipeline, write outputs and manifest, return the exit status."""
    threads = worker_count() if threads is None else threads
    out = _Outputs(cfg)
    start = time.perf_counter()
    error = None
    try:
        status = PIPELINES[cfg.experiment](cfg, out, threads)
    except BlowUpError as exc:
        error = f"{exc} (particle index {exc.particle}, time {exc.time:.17g})"
        status = EXIT_ERROR
    except (ValueError, ArithmeticError, OSError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        status = EXIT_ERROR
    if error:
        print(f"error: {error}", file=sys.stderr)
    try:
        write_json(out.dir / "manifest.json", _manifest(cfg, out, status, time.perf_counter() - start, error))
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return status


# ---------------------------------------------------------------- argv


def _moments_arg(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--moments expects comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvsfde", description="Particle simulation of mean-field delay SDEs with common noise.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "simulate", help="JSON config document")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override outputs.dir")
        if name == "simulate":
            p.add_argument("--model", help="'example' or a registered custom model name")
            p.add_argument("--n", type=int)
            p.add_argument("--dt", type=float)
            p.add_argument("--horizon", type=float)
            p.add_argument("--record-stride", type=int)
            p.add_argument("--moments", type=_moments_arg, help="comma-separated orders, e.g. 2,4")
            p.add_argument("--paths", type=int, help="number of particle paths to write")
    return parser


def _load(args) -> RunConfig:
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a single JSON object")
    else:
        data = {}
    given = data.get("experiment")
    if given is not None and given != args.command:
        raise ConfigError(f"experiment: config says {given!r} but the subcommand is {args.command!r}")
    data["experiment"] = args.command
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data.setdefault("outputs", {})["dir"] = args.out
    if args.command == "simulate":
        num = data.setdefault("numerics", {})
        for flag, key in (("n", "n"), ("dt", "dt"), ("horizon", "horizon"), ("record_stride", "record_stride"), ("moments", "moments")):
            if getattr(args, flag) is not None:
                num[key] = getattr(args, flag)
        if args.paths is not None:
            data.setdefault("outputs", {})["paths"] = args.paths
        if args.model is not None:
            data["model"] = {"kind": "example"} if args.model == "example" else {"kind": "custom", "name": args.model}
    if "seed" not in data:
        raise ConfigError("seed: required (give it in the config or with --seed)")
    return parse_config(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        threads = worker_count()
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return dispatch(cfg, threads)


if __name__ == "__main__":
    sys.exit(main())
