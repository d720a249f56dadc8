"""Command-line pipeline: classify, trace, predict, heatmap, gen-synth,
fit, fit-logdist, evaluate.

Every subcommand accepts ``--config FILE`` (plain-text ``key: value``
lines, keys named like the long flags); explicit flags win over config
values. Randomized subcommands require ``--seed`` and reruns with the same
inputs produce byte-identical outputs, figures included.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Errors print one machine-parsable line ``error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluate, figures, inference, pathtrace, propagation, raster
from .errors import DataError, NumericalError

_DEFAULT_D0 = 1.0  # m
_DEFAULT_L = 140.0  # dB


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Option plumbing
# ---------------------------------------------------------------------------


def _read_config(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DataError(f"malformed config line {line!r}")
        key, _, value = line.partition(":")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


class _Options:
    """Flag values with config-file fallback: flags win, then config,
    then the hard default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg = _read_config(args.config) if getattr(args, "config", None) else {}

    def get(self, name: str, cast=str, default=None, required: bool = False):
        value = getattr(self.args, name, None)
        if value is None and name in self.cfg:
            try:
                value = cast(self.cfg[name])
            except ValueError:
                raise UsageError(f"config value for {name} is not a valid {cast.__name__}")
        if value is None:
            value = default
        if value is None and required:
            raise UsageError(f"missing required option --{name.replace('_', '-')}")
        return value


def _parse_point(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"point {text!r} must be x,y")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"point {text!r} must be numeric x,y") from None


def _parse_merge(text: str) -> dict[int, int]:
    mapping: dict[int, int] = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"merge entry {item!r} must be src=dst")
        src, _, dst = item.partition("=")
        try:
            mapping[int(src)] = int(dst)
        except ValueError:
            raise UsageError(f"merge entry {item!r} must be integer ids") from None
    return mapping


def _fig_path(opt: _Options, anchor: str | Path | None) -> Path | None:
    if getattr(opt.args, "no_fig", False):
        return None
    explicit = opt.get("fig")
    if explicit:
        return Path(explicit)
    if anchor is None:
        return None
    return Path(anchor).with_suffix(".png")


def _fit_options(opt: _Options) -> inference.FitOptions:
    return inference.FitOptions(
        step=opt.get("step", float, 1e-3),
        max_iter=opt.get("max_iter", int, 100_000),
        grad_tol=opt.get("grad_tol", float),
        fixed_step=bool(getattr(opt.args, "fixed_step", False)),
    )


def _write_pgm(values: np.ndarray, path: Path) -> None:
    """Min-max normalized 8-bit graymap rendering of a value matrix."""
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo) * 255.0
    gray = np.rint(scaled).astype(np.uint8)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode()
    path.write_bytes(header + gray.tobytes())


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_classify(args) -> int:
    opt = _Options(args)
    in_path = opt.get("in_path", str, required=True)
    k = opt.get("k", int, required=True)
    seed = opt.get("seed", int, required=True)
    mpp = opt.get("mpp", float, required=True)
    out = Path(opt.get("out", str, required=True))

    rasterimg = raster.load_raster(in_path)
    grid = raster.classify_regions(rasterimg, k, seed, mpp)
    merge_text = opt.get("merge")
    if merge_text:
        grid = raster.merge_regions(grid, _parse_merge(merge_text))
    raster.save_region_grid(grid, out)
    counts = np.bincount(grid.labels.ravel(), minlength=grid.n_types)
    for i in range(grid.n_types):
        color = grid.type_colors[i] if grid.type_colors else ("-",) * 3
        print(f"type {i}: {counts[i]} px, rgb {color[0]},{color[1]},{color[2]}")
    fig = _fig_path(opt, out)
    if fig is not None:
        figures.render_region_map(grid, fig)
        print(f"wrote {out} (+{fig})")
    else:
        print(f"wrote {out}")
    return 0


def _cmd_trace(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    tx = _parse_point(opt.get("tx", str, required=True))
    rx = _parse_point(opt.get("rx", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)

    path = pathtrace.trace_path(grid, tx, rx, d0)
    print("d0,total")
    print(f"{path.d0:.6f},{path.total_distance:.6f}")
    for type_id, length in path.segments:
        print(f"{type_id},{length:.6f}")
    return 0


def _cmd_predict(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    params = propagation.load_params(opt.get("params", str, required=True)).pef_params()
    tx = _parse_point(opt.get("tx", str, required=True))
    rx = _parse_point(opt.get("rx", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    loss = propagation.predict_pef(grid, tx, rx, d0, params)
    print(f"pathloss_db: {loss:.2f}")
    return 0


def _cmd_heatmap(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    params = propagation.load_params(opt.get("params", str, required=True)).pef_params()
    tx = _parse_point(opt.get("tx", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    stride = opt.get("stride", int, 1)
    out = Path(opt.get("out", str, required=True))

    values = propagation.heatmap(grid, tx, d0, params, stride)
    np.savetxt(out, values, fmt="%.6f", delimiter=",")
    pgm = opt.get("pgm")
    if pgm:
        _write_pgm(values, Path(pgm))
    fig = _fig_path(opt, out)
    if fig is not None:
        figures.render_heatmap(values, grid.meters_per_pixel * stride, tx, fig)
    print(f"heatmap {values.shape[1]}x{values.shape[0]}: "
          f"min {values.min():.2f} dB, max {values.max():.2f} dB")
    return 0


def _cmd_gen_synth(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    doc = propagation.load_params(opt.get("params", str, required=True))
    tx = _parse_point(opt.get("tx", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    count = opt.get("k", int, required=True)
    level = opt.get("L", float)
    seed = opt.get("seed", int, required=True)
    out = Path(opt.get("out", str, required=True))

    mset = dataset.gen_synthetic(grid, tx, doc.pef_params(), d0, count, level, seed)
    dataset.save_measurements(mset, out)
    trunc = f", truncated at {level:.2f} dB" if level is not None else ""
    print(f"wrote {len(mset)} records to {out}{trunc}")
    return 0


def _table_lines(names: list[str], params: propagation.PefParams) -> list[str]:
    rows = [("Intercept", "C", params.intercept_c)]
    rows += [(names[i], f"n_{i + 1}", float(params.exponents[i]))
             for i in range(params.n_types)]
    rows.append(("Standard Deviation", "sigma", params.sigma))
    width = max(len(r[0]) for r in rows) + 2
    return [f"{label:<{width}}{var:<8}{value:.2f}" for label, var, value in rows]


def _cmd_fit(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    mset = dataset.load_measurements(opt.get("meas", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    level = opt.get("L", float, _DEFAULT_L)
    out = Path(opt.get("out", str, required=True))
    report_path = opt.get("report")

    init = None
    init_path = opt.get("init")
    if init_path:
        init = propagation.load_params(init_path).pef_params()

    design = inference.DesignMatrix.from_measurements(grid, mset, d0, level)
    dropped = len(mset) - design.k
    report = inference.fit_ml(design, init, _fit_options(opt))
    fitted = report.params
    propagation.save_params(out, fitted.intercept_c, fitted.exponents, fitted.sigma, d0)

    names = grid.type_names or [f"type {i}" for i in range(grid.n_types)]
    lines = [
        f"Maximum-likelihood fit, truncated at L = {level:.2f} dB",
        f"records used: {design.k} (dropped {dropped} at or above L)",
        "",
        *_table_lines(names, fitted),
        "",
        f"log-likelihood: {report.log_likelihood:.4f}",
        f"iterations: {report.iterations}",
        f"converged: {'yes' if report.converged else 'no'}",
        f"final gradient inf-norm: {report.final_gradient_norm:.3e}",
        f"in-sample RMSE: {report.rmse_in_sample:.2f} dB",
    ]
    text = "\n".join(lines)
    print(text)
    if report_path:
        Path(report_path).write_text(text + "\n")
    fig = _fig_path(opt, report_path)
    if fig is not None:
        kept = mset.pathloss < level
        predicted = design.coeffs @ fitted.exponents + fitted.intercept_c
        figures.render_predicted_vs_observed(predicted, mset.pathloss[kept], fig)
    print(f"wrote {out}")
    return 0


def _cmd_fit_logdist(args) -> int:
    opt = _Options(args)
    mset = dataset.load_measurements(opt.get("meas", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    no_trunc = bool(getattr(args, "no_trunc", False))
    level = None if no_trunc else opt.get("L", float, _DEFAULT_L)
    out = opt.get("out")
    report_path = opt.get("report")

    distances = mset.distances()
    losses = mset.pathloss
    if level is not None:
        keep = losses < level
        dropped = int((~keep).sum())
        distances, losses = distances[keep], losses[keep]
    else:
        dropped = 0

    ls = inference.ls_fit_logdist(distances, losses, d0)
    curves = [("LS", ls)]
    lines = [
        f"records used: {losses.size} (dropped {dropped} at or above L)"
        if level is not None else f"records used: {losses.size} (untruncated)",
        f"LS: n={ls.n:.2f}  C={ls.intercept_c:.2f} dB  sigma={ls.sigma:.2f} dB",
    ]
    final = ls
    if not getattr(args, "ls_only", False):
        report = inference.fit_ml_logdist(distances, losses, d0, level,
                                          init=ls, options=_fit_options(opt))
        ml = report.params
        curves.append(("ML", ml))
        lines += [
            f"ML: n={ml.n:.2f}  C={ml.intercept_c:.2f} dB  sigma={ml.sigma:.2f} dB",
            f"log-likelihood: {report.log_likelihood:.4f}",
            f"iterations: {report.iterations}",
            f"converged: {'yes' if report.converged else 'no'}",
            f"in-sample RMSE: {report.rmse_in_sample:.2f} dB",
        ]
        final = ml
    text = "\n".join(lines)
    print(text)
    if report_path:
        Path(report_path).write_text(text + "\n")
    if out:
        propagation.save_params(Path(out), final.intercept_c, [final.n], final.sigma, d0)
    fig = _fig_path(opt, report_path)
    if fig is not None:
        figures.render_fit(distances, losses, curves, fig, truncation=level)
    return 0


def _cmd_evaluate(args) -> int:
    opt = _Options(args)
    grid = raster.load_region_grid(opt.get("grid", str, required=True))
    mset = dataset.load_measurements(opt.get("meas", str, required=True))
    pef_params = propagation.load_params(opt.get("pef", str, required=True)).pef_params()
    ld_doc = propagation.load_params(opt.get("logdist", str, required=True))
    d0 = opt.get("d0", float, _DEFAULT_D0)
    out = opt.get("out")
    cdf_path = opt.get("cdf")

    comparison = evaluate.compare_models(mset, grid, pef_params,
                                         ld_doc.logdist_params(), d0)
    lines = [
        f"records: {len(mset)}",
        f"PEF model:          RMSE {comparison.pef.rmse:.2f} dB, "
        f"mean abs error {comparison.pef.mean_abs_error:.2f} dB",
        f"log-distance model: RMSE {comparison.logdist.rmse:.2f} dB, "
        f"mean abs error {comparison.logdist.mean_abs_error:.2f} dB",
        f"winner: {comparison.winner} (RMSE delta {comparison.rmse_delta:.2f} dB)",
    ]
    text = "\n".join(lines)
    print(text)
    if out:
        Path(out).write_text(text + "\n")
    if cdf_path:
        cdf_path = Path(cdf_path)
        _write_cdf(comparison.pef, cdf_path)
        _write_cdf(comparison.logdist, cdf_path.with_name(
            cdf_path.stem + "-logdist" + cdf_path.suffix))
    fig = _fig_path(opt, cdf_path or out)
    if fig is not None:
        figures.render_error_cdf(
            [("PEF", comparison.pef), ("log-distance", comparison.logdist)], fig)
    return 0


def _write_cdf(report: evaluate.EvalReport, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("abs_error_db,fraction\n")
        for err, frac in report.error_cdf:
            fh.write(f"{err:.6f},{frac:.6f}\n")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key: value file supplying defaults for any flag")


def _add_fig(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fig", help="figure output path (default: alongside the output)")
    p.add_argument("--no-fig", action="store_true", help="skip figure rendering")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--step", type=float, help="initial ascent step per unit gradient")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--fixed-step", action="store_true", dest="fixed_step",
                   help="constant step, no backtracking")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pef",
        description="Per-region path loss modeling: classify maps, trace paths, "
                    "fit exponents from truncated measurements, render coverage.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("classify", help="k-means region classification of a raster map")
    p.add_argument("--in", dest="in_path", help="input PPM map")
    p.add_argument("--k", type=int, help="number of region types")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--mpp", type=float, help="meters per pixel")
    p.add_argument("--out", help="output region grid (PGM + .meta sidecar)")
    p.add_argument("--merge", help="fold clusters together, e.g. 3=1,4=1")
    _add_fig(p)
    _add_common(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("trace", help="print the path matrix of one Tx-Rx line")
    p.add_argument("--grid")
    p.add_argument("--tx")
    p.add_argument("--rx")
    p.add_argument("--d0", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("predict", help="mean path loss between two points")
    p.add_argument("--grid")
    p.add_argument("--params")
    p.add_argument("--tx")
    p.add_argument("--rx")
    p.add_argument("--d0", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("heatmap", help="coverage heatmap around a transmitter")
    p.add_argument("--grid")
    p.add_argument("--params")
    p.add_argument("--tx")
    p.add_argument("--d0", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", help="output CSV of dB values")
    p.add_argument("--pgm", help="optional min-max normalized graymap")
    _add_fig(p)
    _add_common(p)
    p.set_defaults(func=_cmd_heatmap)

    p = sub.add_parser("gen-synth", help="synthetic measurements from known parameters")
    p.add_argument("--grid")
    p.add_argument("--params")
    p.add_argument("--tx")
    p.add_argument("--d0", type=float)
    p.add_argument("--k", type=int, help="records to generate")
    p.add_argument("--L", type=float, help="truncation level in dB")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output measurement CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("fit", help="maximum-likelihood PEF fit from measurements")
    p.add_argument("--grid")
    p.add_argument("--meas")
    p.add_argument("--d0", type=float)
    p.add_argument("--L", type=float, help=f"truncation level (default {_DEFAULT_L:.0f})")
    p.add_argument("--init", help="params file with starting values")
    p.add_argument("--out", help="fitted params file")
    p.add_argument("--report", help="human-readable fit report")
    _add_fit_flags(p)
    _add_fig(p)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("fit-logdist", help="LS and truncated-ML log-distance fits")
    p.add_argument("--meas")
    p.add_argument("--d0", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--no-trunc", action="store_true", dest="no_trunc",
                   help="untruncated Gaussian ML")
    p.add_argument("--ls-only", action="store_true", dest="ls_only",
                   help="stop after the least-squares fit")
    p.add_argument("--out", help="fitted params file")
    p.add_argument("--report")
    _add_fit_flags(p)
    _add_fig(p)
    _add_common(p)
    p.set_defaults(func=_cmd_fit_logdist)

    p = sub.add_parser("evaluate", help="compare PEF and log-distance predictions")
    p.add_argument("--grid")
    p.add_argument("--meas")
    p.add_argument("--pef", help="PEF params file")
    p.add_argument("--logdist", help="log-distance params file")
    p.add_argument("--d0", type=float)
    p.add_argument("--out", help="comparison report")
    p.add_argument("--cdf", help="absolute-error CDF CSV")
    _add_fig(p)
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and bad flags (2)
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
