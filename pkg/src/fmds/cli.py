"""Command-line surface: reproducible runs over CSV/JSON files.

Every command writes its outputs plus a single manifest.json into --out.
Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .align import CurvilinearConfig, align, save_alignment_report
from .basis import make_basis
from .cmds import init_coeffs
from .coeffs import load_coeffs, save_coeffs
from .dissim import (
    DissimilaritySeries,
    correlation_dissim,
    pair_count,
    pair_indices,
    read_dissim_csv,
    read_price_csv,
)
from .optimizer import FitConfig, fit
from .study import ScenarioConfig, run_study, save_study_report

logger = logging.getLogger(__name__)

DESK_PRESET = {"n": 50, "p": 2, "L": "5", "m": "15,50", "reps": 20}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    resolved: dict[str, Any],
    inputs: Sequence[Path] = (),
    extra: dict[str, Any] | None = None,
) -> Path:
    payload = {
        "command": command,
        "version": __version__,
        "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "resolved": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs},
    }
    if extra:
        payload.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset flags from the JSON file given by --config."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        parser.error(f"config file not found: {path}")
    try:
        overrides = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        parser.error(f"invalid JSON in {path}: {exc}")
    if not isinstance(overrides, dict):
        parser.error(f"config file {path} must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            parser.error(f"unknown config key {key!r} in {path}")
        if getattr(args, attr) is None:
            setattr(args, attr, value)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _fit_config(args: argparse.Namespace, seed: int) -> FitConfig:
    kwargs: dict[str, Any] = {"seed": seed}
    if getattr(args, "alpha", None) is not None:
        kwargs["alpha"] = args.alpha
    if getattr(args, "epsilon", None) is not None:
        kwargs["epsilon"] = args.epsilon
    if getattr(args, "max_sweeps", None) is not None:
        kwargs["max_sweeps"] = args.max_sweeps
    return FitConfig(**kwargs)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    if args.desk:
        for key, value in DESK_PRESET.items():
            if getattr(args, key) is None:
                setattr(args, key, value)
    defaults = {"n": 50, "p": 2, "L": "5", "m": "15", "reps": 20}
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    seed = args.seed if args.seed is not None else 0
    l_values = _int_list(args.L) if isinstance(args.L, str) else [int(args.L)]
    m_values = _int_list(args.m) if isinstance(args.m, str) else [int(args.m)]
    cells = [
        ScenarioConfig(n=int(args.n), p=int(args.p), L=lv, m=mv, reps=int(args.reps), seed=seed)
        for lv in l_values
        for mv in m_values
    ]
    fit_config = _fit_config(args, seed)
    strategy = args.init or "per-timepoint"
    report = run_study(cells, fit_config=fit_config, init_strategy=strategy)
    out = _out_dir(args)
    reps_path, agg_path = save_study_report(out, report)
    _write_manifest(
        out,
        "simulate",
        {
            "n": int(args.n),
            "p": int(args.p),
            "L": l_values,
            "m": m_values,
            "reps": int(args.reps),
            "seed": seed,
            "init": strategy,
            "alpha": fit_config.alpha,
            "epsilon": fit_config.epsilon,
            "max_sweeps": fit_config.max_sweeps,
        },
        extra={
            "outputs": [reps_path.name, agg_path.name],
            "total_seconds": report.total_seconds,
            "fit_seconds": [
                {"L": r.L, "m": r.m, "rep": r.rep, "seconds": r.fit_seconds,
                 "sweeps": r.fit_sweeps, "converged": r.fit_converged}
                for r in report.records
            ],
            "failures": [
                {"L": f.L, "m": f.m, "rep": f.rep, "error": f.error} for f in report.failures
            ],
        },
    )
    for cell in report.cells:
        print(f"L={cell.L} m={cell.m}: rmse_dissim={cell.rmse_dissim:.6g} "
              f"rmse_coeff={cell.rmse_coeff:.6g} ({cell.reps_done} reps)")
    return 0


def _load_series(args: argparse.Namespace) -> tuple[DissimilaritySeries, Path, dict[str, Any]]:
    if args.prices:
        path = Path(args.prices)
        panel = read_price_csv(path)
        series = correlation_dissim(panel)
        info = {
            "source": "prices",
            "tickers": list(panel.tickers),
            "months": list(panel.month_keys),
            "dropped_tickers": list(panel.dropped),
        }
    else:
        path = Path(args.dissim)
        series = read_dissim_csv(path)
        info = {"source": "dissimilarities"}
    return series, path, info


def cmd_fit(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    p = int(args.p) if args.p is not None else 2
    interior = int(args.L) if args.L is not None else 6
    series, input_path, info = _load_series(args)
    spec = make_basis(interior, float(series.grid[0]), float(series.grid[-1]))
    strategy = args.init or "mean-matrix"
    start = init_coeffs(series, spec, p, strategy=strategy)
    fit_config = _fit_config(args, seed)
    t0 = time.perf_counter()
    result = fit(series, spec, p, fit_config, start)
    fit_seconds = time.perf_counter() - t0
    out = _out_dir(args)
    coeffs_path = out / "coeffs.csv"
    save_coeffs(
        coeffs_path,
        result.coeffs,
        spec,
        meta={
            "seed": seed,
            "config": {
                "alpha": fit_config.alpha,
                "gamma1": fit_config.gamma1,
                "gamma2": fit_config.gamma2,
                "adam_eps": fit_config.adam_eps,
                "epsilon": fit_config.epsilon,
                "max_sweeps": fit_config.max_sweeps,
            },
        },
    )
    _write_manifest(
        out,
        "fit",
        {
            "p": p,
            "L": interior,
            "seed": seed,
            "init": strategy,
            "alpha": fit_config.alpha,
            "epsilon": fit_config.epsilon,
            "max_sweeps": fit_config.max_sweeps,
        },
        inputs=[input_path],
        extra={
            "outputs": [coeffs_path.name, coeffs_path.with_suffix(".json").name],
            "n_objects": series.n,
            "time_points": len(series.grid),
            "super_matrix_rows": pair_count(series.n),
            "fit_seconds": fit_seconds,
            "fit_sweeps": result.sweeps_used,
            "fit_converged": result.converged,
            "final_loss": result.final_loss,
            **info,
        },
    )
    print(f"fitted {series.n} objects over {len(series.grid)} time points "
          f"in {fit_seconds:.2f}s ({result.sweeps_used} sweeps, "
          f"converged={result.converged})")
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    coeffs, spec, _ = load_coeffs(Path(args.coeffs))
    times = _float_list(args.t)
    if not times:
        raise ValueError("no snapshot times given")
    out = _out_dir(args)
    written = []
    for t in times:
        bvec = np.array([float(v) for v in _eval_at(spec, t)])
        points = coeffs.mats @ bvec  # (n, p)
        path = out / f"snapshot_t{t:g}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["object", "t"] + [f"x{d + 1}" for d in range(coeffs.p)])
            for i in range(coeffs.n):
                name = coeffs.labels[i] if coeffs.labels else str(i + 1)
                writer.writerow([name, repr(float(t))] + [repr(float(v)) for v in points[i]])
        written.append(path.name)
    _write_manifest(
        out, "snapshot", {"t": times}, inputs=[Path(args.coeffs)], extra={"outputs": written}
    )
    print(f"wrote {len(written)} snapshot file(s)")
    return 0


def _eval_at(spec, t):
    from .basis import eval_basis

    return eval_basis(spec, t)


def cmd_cluster(args: argparse.Namespace) -> int:
    coeffs, spec, _ = load_coeffs(Path(args.coeffs))
    threshold = args.threshold if args.threshold is not None else 0.3
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    t = float(args.t)
    center = coeffs.label_index(args.center)
    bvec = _eval_at(spec, t)
    points = coeffs.mats @ bvec
    dists = np.linalg.norm(points - points[center], axis=1)
    names = list(coeffs.labels) if coeffs.labels else [str(i + 1) for i in range(coeffs.n)]
    red = [names[i] for i in range(coeffs.n) if i != center and dists[i] < threshold]
    blue = [names[i] for i in range(coeffs.n) if i != center and dists[i] >= threshold]
    out = _out_dir(args)
    report = {
        "center": names[center],
        "threshold": threshold,
        "t": t,
        "red": red,
        "blue": blue,
    }
    (out / "cluster.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _write_manifest(
        out,
        "cluster",
        {"center": args.center, "threshold": threshold, "t": t},
        inputs=[Path(args.coeffs)],
        extra={"outputs": ["cluster.json"], "red_size": len(red), "blue_size": len(blue)},
    )
    print(f"center {names[center]}: {len(red)} red, {len(blue)} blue")
    return 0


def _estimated_values(coeffs, spec, series: DissimilaritySeries) -> np.ndarray:
    if coeffs.n != series.n:
        raise ValueError(f"coefficients have n={coeffs.n} but series has n={series.n}")
    positions = coeffs.evaluate(spec, series.grid)
    idx = pair_indices(coeffs.n)
    diffs = positions[idx[:, 0]] - positions[idx[:, 1]]
    return np.sqrt(np.einsum("rpm,rpm->rm", diffs, diffs))


def cmd_shepard(args: argparse.Namespace) -> int:
    coeffs, spec, _ = load_coeffs(Path(args.coeffs))
    series = read_dissim_csv(Path(args.dissim))
    estimated = _estimated_values(coeffs, spec, series)
    if args.t in (None, "all"):
        columns = list(range(series.m))
    else:
        wanted = set(_float_list(args.t))
        columns = [k for k, t in enumerate(series.grid) if float(t) in wanted]
        if not columns:
            raise ValueError(f"no grid points match t={args.t}")
    idx = pair_indices(series.n)
    out = _out_dir(args)
    path = out / "shepard.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "t", "observed", "estimated"])
        for r in range(len(idx)):
            for k in columns:
                writer.writerow(
                    [
                        int(idx[r, 0]) + 1,
                        int(idx[r, 1]) + 1,
                        repr(float(series.grid[k])),
                        repr(float(series.values[r, k])),
                        repr(float(estimated[r, k])),
                    ]
                )
    _write_manifest(
        out,
        "shepard",
        {"t": args.t or "all"},
        inputs=[Path(args.coeffs), Path(args.dissim)],
        extra={"outputs": [path.name], "rows": len(idx) * len(columns)},
    )
    print(f"wrote {len(idx) * len(columns)} shepard rows")
    return 0


def cmd_residuals(args: argparse.Namespace) -> int:
    coeffs, spec, _ = load_coeffs(Path(args.coeffs))
    series = read_dissim_csv(Path(args.dissim))
    tol = args.tol if args.tol is not None else 0.1
    estimated = _estimated_values(coeffs, spec, series)
    resid = estimated - series.values  # estimated minus observed
    idx = pair_indices(series.n)
    out = _out_dir(args)
    path = out / "residuals.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "t", "residual"])
        for r in range(len(idx)):
            for k in range(series.m):
                writer.writerow(
                    [
                        int(idx[r, 0]) + 1,
                        int(idx[r, 1]) + 1,
                        repr(float(series.grid[k])),
                        repr(float(resid[r, k])),
                    ]
                )
    per_pair_max = np.abs(resid).max(axis=1)
    summary = {
        "mean_residual": float(resid.mean()),
        "max_abs_residual": float(np.abs(resid).max()),
        "tolerance": tol,
        # per pair: max absolute residual across all time points within tolerance
        "fraction_pairs_within_tol": float(np.mean(per_pair_max <= tol)),
        # per (pair, time point) cell
        "fraction_cells_within_tol": float(np.mean(np.abs(resid) <= tol)),
    }
    (out / "residual_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _write_manifest(
        out,
        "residuals",
        {"tol": tol},
        inputs=[Path(args.coeffs), Path(args.dissim)],
        extra={"outputs": [path.name, "residual_summary.json"], **summary},
    )
    print(
        f"{summary['fraction_pairs_within_tol']:.1%} of pairs within |residual| <= {tol}"
    )
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    fitted, spec_f, _ = load_coeffs(Path(args.fitted))
    truth, spec_t, _ = load_coeffs(Path(args.truth))
    if (spec_f.domain_lo, spec_f.domain_hi, spec_f.interior_knots) != (
        spec_t.domain_lo,
        spec_t.domain_hi,
        spec_t.interior_knots,
    ):
        raise ValueError("fitted and reference coefficient files use different bases")
    seed = args.seed if args.seed is not None else 0
    m = int(args.m) if args.m is not None else int(spec_f.domain_hi)
    config = CurvilinearConfig(seed=seed)
    result = align(fitted, truth, spec_f, m, config)
    out = _out_dir(args)
    save_alignment_report(out / "alignment.json", result)
    _write_manifest(
        out,
        "align",
        {"m": m, "seed": seed},
        inputs=[Path(args.fitted), Path(args.truth)],
        extra={
            "outputs": ["alignment.json"],
            "objective": result.objective,
            "grad_norm": result.grad_norm,
            "converged": result.converged,
        },
    )
    print(f"alignment objective {result.objective:.6g} "
          f"(grad norm {result.grad_norm:.3g}, det {result.det_sign:+.0f})")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmds",
        description="Smooth low-dimensional trajectories for time-varying dissimilarities.",
    )
    parser.add_argument("--version", action="version", version=f"fmds {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", default=None, help="JSON file with flag defaults")

    sim = sub.add_parser("simulate", help="run the replicated synthetic study")
    common(sim)
    sim.add_argument("--n", type=int, default=None, help="objects per scenario")
    sim.add_argument("--p", type=int, default=None, help="embedding dimension")
    sim.add_argument("--L", default=None, help="interior knot counts, comma separated")
    sim.add_argument("--m", default=None, help="time-period lengths, comma separated")
    sim.add_argument("--reps", type=int, default=None, help="replications per cell")
    sim.add_argument("--desk", action="store_true",
                     help="desk-scale preset: n=50 p=2 L=5 m=15,50 reps=20")
    sim.add_argument("--init", choices=["mean-matrix", "per-timepoint"], default=None,
                     help="coefficient initialization (default per-timepoint)")
    sim.add_argument("--alpha", type=float, default=None, help="Adam learning rate")
    sim.add_argument("--epsilon", type=float, default=None, help="convergence threshold")
    sim.add_argument("--max-sweeps", type=int, default=None, help="sweep cap per fit")
    sim.set_defaults(func=cmd_simulate)

    fitp = sub.add_parser("fit", help="fit trajectories to prices or dissimilarities")
    common(fitp)
    src = fitp.add_mutually_exclusive_group(required=True)
    src.add_argument("--prices", default=None, help="date,ticker,close CSV")
    src.add_argument("--dissim", default=None, help="long-format i,j,t,d CSV")
    fitp.add_argument("--p", type=int, default=None, help="embedding dimension (default 2)")
    fitp.add_argument("--L", type=int, default=None, help="interior knots (default 6)")
    fitp.add_argument("--init", choices=["mean-matrix", "per-timepoint"], default=None)
    fitp.add_argument("--alpha", type=float, default=None, help="Adam learning rate")
    fitp.add_argument("--epsilon", type=float, default=None, help="convergence threshold")
    fitp.add_argument("--max-sweeps", type=int, default=None, help="sweep cap")
    fitp.set_defaults(func=cmd_fit)

    snap = sub.add_parser("snapshot", help="trajectory coordinates at given times")
    common(snap)
    snap.add_argument("--coeffs", required=True, help="coefficient CSV from fit")
    snap.add_argument("--t", required=True, help="times, comma separated")
    snap.set_defaults(func=cmd_snapshot)

    clus = sub.add_parser("cluster", help="two clusters around a center object")
    common(clus)
    clus.add_argument("--coeffs", required=True, help="coefficient CSV from fit")
    clus.add_argument("--center", required=True, help="center object label")
    clus.add_argument("--t", required=True, type=float, help="evaluation time")
    clus.add_argument("--threshold", type=float, default=None,
                      help="red/blue distance threshold (default 0.3)")
    clus.set_defaults(func=cmd_cluster)

    shep = sub.add_parser("shepard", help="observed vs estimated dissimilarities")
    common(shep)
    shep.add_argument("--coeffs", required=True)
    shep.add_argument("--dissim", required=True, help="long-format i,j,t,d CSV")
    shep.add_argument("--t", default=None, help="times (comma separated) or 'all'")
    shep.set_defaults(func=cmd_shepard)

    res = sub.add_parser("residuals", help="fit residual report")
    common(res)
    res.add_argument("--coeffs", required=True)
    res.add_argument("--dissim", required=True)
    res.add_argument("--tol", type=float, default=None,
                     help="absolute residual tolerance (default 0.1)")
    res.set_defaults(func=cmd_residuals)

    alg = sub.add_parser("align", help="orthogonal alignment of two coefficient files")
    common(alg)
    alg.add_argument("--fitted", required=True)
    alg.add_argument("--truth", required=True)
    alg.add_argument("--m", type=int, default=None,
                     help="time-period length (default: basis domain end)")
    alg.set_defaults(func=cmd_align)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config_file(args, parser)
    try:
        return int(args.func(args))
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())
