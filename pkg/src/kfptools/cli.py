"""Command-line entry point: ``kfp <subcommand> ...``.

Exit codes: 0 success, 1 domain violation, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import secrets
import sys
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import check_ss_condition, classify_fast_slow, identifiability_report
from .compiler import compile_raw, compile_scaled, free_parameters
from .data import DatasetFormatError, NoiseSpec, dataset_to_csv, gen_dataset, read_dataset
from .fixtures import FIGURES, NOISE_LEVELS, TIMEPOINT_COUNTS
from .graph import (PathwayError, PathwayGraph, edge_census, is_arborescence,
                    parse_pathway, validate_graph)
from .inference.fit import SamplerConfig, fit
from .inference.posterior import ModelDataMismatch, PriorSpec
from .simulate import StiffnessError, default_t_max, solve_exact, solve_numeric

log = logging.getLogger("kfptools")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class InputError(Exception):
    """Unreadable or malformed input (exit 2)."""


class DomainError(Exception):
    """Input is well formed but violates a modelling requirement (exit 1)."""


# ---------------------------------------------------------------------------
# run manifest


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects what a manifest needs while a subcommand executes."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.args = args
        self.argv = argv
        self.started = datetime.now(timezone.utc)
        self.inputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.extra: dict = {}

    def add_input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def seed(self) -> int:
        """The --seed value, or a fresh one that gets recorded."""
        if getattr(self.args, "seed", None) is None:
            self.args.seed = secrets.randbits(63)
        self.seeds["seed"] = int(self.args.seed)
        return int(self.args.seed)

    def manifest(self) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": ["kfp", *self.argv],
            "subcommand": self.args.command,
            "tool_version": __version__,
            "input_sha256": self.inputs,
            "seeds": self.seeds,
            "config": config,
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            **self.extra,
        }

    def write_manifest(self, outdir: Path):
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "manifest.json").write_text(
            json.dumps(self.manifest(), indent=2, default=str) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# input helpers


def load_graph(path, run: Optional[Run] = None) -> PathwayGraph:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path} is not UTF-8 text") from None
    try:
        g = parse_pathway(text)
    except PathwayError as exc:
        raise InputError(f"{path}: {exc}") from None
    if run is not None:
        run.add_input(path)
    return g


def _vector(text: Optional[str], n: int, what: str) -> Optional[np.ndarray]:
    if text is None:
        return None
    try:
        values = [float(Fraction(v.strip())) for v in text.split(",")]
    except (ValueError, ZeroDivisionError):
        raise InputError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(values) != n:
        raise InputError(f"{what}: expected {n} values, got {len(values)}")
    return np.array(values)


def _require_valid(g: PathwayGraph):
    problems = validate_graph(g)
    if problems:
        raise DomainError("invalid pathway: " + "; ".join(str(p) for p in problems))


def scaled_model(g: PathwayGraph, args, need_k: bool):
    """Scaled model from the edge fluxes, with k from --x-total or --k."""
    if not g.has_fluxes:
        raise DomainError("pathway has no edge fluxes; a flux on every edge is needed")
    xt = _vector(getattr(args, "x_total", None), g.n_nodes, "--x-total")
    k = _vector(getattr(args, "k", None), g.n_nodes, "--k")
    try:
        m = compile_scaled(g, xt)
    except (PathwayError, ValueError) as exc:
        raise DomainError(str(exc)) from None
    if k is not None:
        if np.any(k <= 0):
            raise DomainError("turnover rates must be positive")
        m = m.with_k(k)
    if need_k and m.k is None:
        raise InputError("turnover rates unknown: pass --k or --x-total")
    return m


def _emit(args, text: str, filename: Optional[str] = None):
    if args.out and filename:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _matrix_csv(name: str, M: np.ndarray, rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# {name}"])
    w.writerow(["", *cols])
    M = np.atleast_2d(M)
    for r, row in zip(rows, M):
        w.writerow([r, *(repr(float(v)) for v in row)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args, run: Run) -> int:
    g = load_graph(args.pathway, run)
    problems = validate_graph(g)
    if args.format == "json":
        print(json.dumps({"valid": not problems,
                          "violations": [{"code": p.code, "message": p.message, "items": list(p.items)}
                                         for p in problems]}, indent=2))
    elif problems:
        print(f"{args.pathway}: {len(problems)} violation(s)")
        for p in problems:
            print(f"  [{p.code}] {p.message}")
    else:
        c = edge_census(g)
        print(f"{args.pathway}: valid ({c.n_nodes} metabolites, {c.n_edges} edges)")
    return EXIT_DOMAIN if problems else EXIT_OK


def cmd_compile(args, run: Run) -> int:
    g = load_graph(args.pathway, run)
    _require_valid(g)
    spec = free_parameters(g, concentrations_available=args.x_total is not None)
    blocks = []
    if g.has_fluxes:
        xt = _vector(args.x_total, g.n_nodes, "--x-total")
        try:
            raw = compile_raw(g, xt)
        except (PathwayError, ValueError) as exc:
            raise DomainError(str(exc)) from None
        nodes = list(g.nodes)
        for name in ("W", "D_in", "D_out", "D_L", "D_U", "D_V", "F_in", "F_out"):
            blocks.append(_matrix_csv(name, getattr(raw, name), nodes, nodes))
        blocks.append(_matrix_csv("M", raw.M, nodes, [e.id for e in g.edges]))
        if raw.A_hat is not None:
            blocks.append(_matrix_csv("A_hat", raw.A_hat, nodes, nodes))
            blocks.append(_matrix_csv("b_hat", raw.b_hat[None, :], ["b_hat"], nodes))
        m = scaled_model(g, args, need_k=False)
        blocks.append(_matrix_csv("B", m.B, nodes, nodes))
        blocks.append(_matrix_csv("alpha", m.alpha[None, :], ["alpha"], nodes))
        if m.k is not None:
            blocks.append(_matrix_csv("k", m.k[None, :], ["k"], nodes))
    spec_json = json.dumps(spec.to_json(), indent=2) + "\n"
    if args.out:
        if blocks:
            _emit(args, "\n".join(blocks), "matrices.csv")
        _emit(args, spec_json, "parameters.json")
    else:
        if blocks:
            sys.stdout.write("\n".join(blocks) + "\n")
        sys.stdout.write(spec_json)
    return EXIT_OK


def cmd_analyze(args, run: Run) -> int:
    g = load_graph(args.pathway, run)
    _require_valid(g)
    c = edge_census(g)
    out = {
        "census": dict(zip(("N", "R", "E_L", "E_U", "E_V", "E_W"), c.as_tuple())),
        "is_arborescence": is_arborescence(g),
    }
    fast = None
    if g.has_fluxes:
        m = scaled_model(g, args, need_k=False)
        report = identifiability_report(m, g)
        out.update(report.to_json())
        out["degenerate_messages"] = [f.message for f in report.degenerate_flags]
        if m.k is not None:
            fast = classify_fast_slow(m, args.threshold)
            out["fast_slow"] = None if fast is None else fast.to_json(g.nodes)
            if fast is not None:
                man = fast.manifold
                out["fast_slow"]["slow_manifold"] = {
                    "coefficients": dict(zip(g.nodes, man.coefficients.tolist())),
                    "constant": man.constant}
        else:
            out["fast_slow"] = None
    else:
        out.update({"ss_condition": check_ss_condition(g), "verdict": None,
                    "note": "structure only: add edge fluxes for steady-state and fast-slow analysis"})
    text = json.dumps(out, indent=2) + "\n"
    if args.out:
        _emit(args, text, "analysis.json")
    if args.format == "json":
        if not args.out:
            sys.stdout.write(text)
    else:
        print(f"census: N={c.n_nodes} R={c.n_edges} |E_L|={c.labeled_in} |E_U|={c.unlabeled_in} "
              f"|E_V|={c.exit} |E_W|={c.internal}")
        print(f"steady-state counting condition: {'holds' if out['ss_condition'] else 'fails'}")
        if out.get("verdict"):
            print(f"identifiability verdict: {out['verdict']}")
            for msg in out["degenerate_messages"]:
                print(f"  flag: {msg}")
        if "fast_slow" in out:
            if fast is None:
                print("fast-slow: no single pool is fast at the chosen threshold")
            else:
                name = g.nodes[fast.fast_node]
                print(f"fast-slow: {name} is {fast.ratio:.3g}x faster; start "
                      f"{'is' if fast.ic_on_slow_manifold else 'is not'} on its slow manifold; "
                      f"its turnover rate is {'' if fast.identifiable_fast_rate else 'not '}identifiable")
    return EXIT_OK


def _times(args, m) -> np.ndarray:
    if args.times:
        t = _vector(args.times, len(args.times.split(",")), "--times")
        if np.any(t < 0) or np.any(np.diff(t) < 0):
            raise InputError("--times must be nonnegative and sorted")
        return t
    t_max = default_t_max(m) if args.t_max is None else args.t_max
    if not t_max > 0:
        raise InputError("--t-max must be positive")
    return np.linspace(0.0, t_max, args.n_times)


def cmd_simulate(args, run: Run) -> int:
    g = load_graph(args.pathway, run)
    _require_valid(g)
    if args.plot and not args.out:
        raise InputError("--plot needs --out")
    m = scaled_model(g, args, need_k=True)
    times = _times(args, m)
    try:
        if args.method == "exact":
            traj = solve_exact(m, times)
        else:
            traj = solve_numeric(m, times, rel_tol=args.rel_tol)
    except StiffnessError as exc:
        raise DomainError(f"{exc}; use --method exact") from None
    if args.format == "json" and not args.out:
        doc = {"times": traj.times.tolist(),
               "proportions": {n: traj.values[:, i].tolist() for i, n in enumerate(traj.nodes)}}
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        _emit(args, traj.to_csv(), "trajectory.csv")
    if args.plot:
        from .plotting import trajectory_svg
        _emit(args, trajectory_svg(traj), "trajectory.svg")
    return EXIT_OK


def _figure_or_pathway(args, run: Run):
    if args.figure:
        fx = FIGURES.get(args.figure)
        if fx is None:
            raise InputError(f"unknown figure {args.figure!r}; choose from {sorted(FIGURES)}")
        return fx.graph(), fx.model()
    if not args.pathway:
        raise InputError("give a pathway file or --figure")
    g = load_graph(args.pathway, run)
    _require_valid(g)
    return g, scaled_model(g, args, need_k=True)


def cmd_gen_data(args, run: Run) -> int:
    g, m = _figure_or_pathway(args, run)
    seed = run.seed()
    try:
        noise = NoiseSpec(args.noise, args.replicates, seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    t_max = default_t_max(m) if args.t_max is None else args.t_max
    if args.timepoints < 1 or not t_max > 0:
        raise InputError("need --timepoints >= 1 and a positive --t-max")
    d = gen_dataset(m, args.timepoints, t_max, noise)
    run.extra["t_max"] = t_max
    _emit(args, dataset_to_csv(d), "data.csv")
    return EXIT_OK


def _sigma_mode(text: str):
    if text == "infer":
        return "infer"
    if text.startswith("fixed:"):
        try:
            value = float(text[len("fixed:"):])
        except ValueError:
            value = float("nan")
        if value > 0:
            return value
    raise InputError(f"--sigma-mode must be 'infer' or 'fixed:<positive value>', got {text!r}")


def _priors(items) -> PriorSpec:
    bounds = {}
    for item in items or []:
        try:
            name, rng = item.split("=", 1)
            lo, hi = (float(Fraction(v)) for v in rng.split(","))
        except ValueError:
            raise InputError(f"--prior expects name=lo,hi, got {item!r}") from None
        bounds[name.strip()] = (lo, hi)
    try:
        return PriorSpec(bounds)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _sampler_config(args, seed: int) -> SamplerConfig:
    try:
        return SamplerConfig(chains=args.chains, warmup=args.warmup, draws=args.draws, seed=seed,
                             sampler=args.sampler, sigma_mode=_sigma_mode(args.sigma_mode),
                             metric=args.metric, target_accept=args.target_accept,
                             workers=args.workers)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _print_summary(result, truth=None):
    head = f"{'parameter':<12}{'mode':>10}{'2.5%':>10}{'97.5%':>10}{'R-hat':>8}{'ESS':>8}"
    if truth:
        head += f"{'truth':>10}"
    print(head)
    for j, name in enumerate(result.names):
        lo, hi = result.credible_95[j]
        line = (f"{name:<12}{result.kde_mode[j]:>10.4f}{lo:>10.4f}{hi:>10.4f}"
                f"{result.rhat[j]:>8.3f}{result.ess[j]:>8.0f}")
        if truth:
            t = truth.get(name)
            line += f"{float(t):>10.4f}" if t is not None else f"{'':>10}"
        print(line)
    if not result.converged:
        print("WARNING: not converged (R-hat above 1.05)")


def cmd_fit(args, run: Run) -> int:
    g = load_graph(args.pathway, run)
    _require_valid(g)
    try:
        d = read_dataset(args.data, g.nodes)
    except OSError as exc:
        raise InputError(f"cannot read {args.data}: {exc.strerror or exc}") from None
    except DatasetFormatError as exc:
        raise InputError(f"{args.data}: {exc}") from None
    run.add_input(args.data)
    seed = run.seed()
    cfg = _sampler_config(args, seed)
    prior = _priors(args.prior)
    try:
        result = fit(d, g, prior, cfg)
    except ModelDataMismatch as exc:
        raise DomainError(str(exc)) from None
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "samples.csv").write_text(result.samples_csv(), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(result.summary_json(), indent=2) + "\n",
                                      encoding="utf-8")
    if args.plot:
        from .plotting import posterior_svg
        (out / "posterior.svg").write_text(posterior_svg(result), encoding="utf-8")
    run.extra["converged"] = result.converged
    if args.format == "json":
        print(json.dumps(result.summary_json(), indent=2))
    else:
        _print_summary(result)
    return EXIT_OK


def cmd_reproduce(args, run: Run) -> int:
    from .plotting import grid_svg
    from .reproduce import cell_dirname, run_grid, summary_rows

    if args.figure not in FIGURES:
        raise InputError(f"unknown figure {args.figure!r}; choose from {sorted(FIGURES)}")
    fx = FIGURES[args.figure]
    seed = run.seed()
    cfg = _sampler_config(args, seed)
    out = Path(args.out or args.figure)
    noise_levels = [float(v) for v in args.noise_levels.split(",")] if args.noise_levels else NOISE_LEVELS
    timepoints = [int(v) for v in args.timepoints.split(",")] if args.timepoints else TIMEPOINT_COUNTS
    cells = run_grid(args.figure, seed, cfg, noise_levels, timepoints, t_max=args.t_max, outdir=out)
    cell_info = []
    for index, c in enumerate(cells):
        cell_run = Run(run.args, run.argv)
        cell_run.seeds = {"data_seed": c.data_seed, "fit_seed": c.fit_seed, "grid_seed": seed,
                          "cell_index": index}
        cell_run.extra = {"n_timepoints": c.n_timepoints, "noise": c.noise, "t_max": c.t_max,
                          "seconds": c.seconds}
        cell_run.write_manifest(out / cell_dirname(c.n_timepoints, c.noise))
        cell_info.append({"dir": cell_dirname(c.n_timepoints, c.noise), "data_seed": c.data_seed,
                          "fit_seed": c.fit_seed, "seconds": c.seconds})
    rows = summary_rows(args.figure, cells)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    grid = {(c.noise, c.n_timepoints): c.result for c in cells}
    truth = {k: float(v) for k, v in fx.truth.items()}
    (out / "grid.svg").write_text(
        grid_svg(grid, fx.reported, noise_levels, timepoints, truth, fx.title), encoding="utf-8")
    run.extra["cells"] = cell_info
    run.extra["t_max"] = cells[0].t_max if cells else None
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    else:
        for c in cells:
            print(f"-- {c.n_timepoints} points, {c.noise:.1%} noise ({c.seconds:.0f}s)")
            _print_summary(c.result, fx.truth)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, top: bool):
    default = None if top else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=default, help="random seed (recorded in the manifest)")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--format", choices=("json", "text"), default="text" if top else argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else argparse.SUPPRESS)


def _model_flags(p):
    p.add_argument("--x-total", help="total concentrations, comma separated, in metabolite order")
    p.add_argument("--k", help="turnover rates, comma separated (overrides --x-total)")


def _sampler_flags(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--sigma-mode", default="infer", help="'infer' or 'fixed:<relative sd>'")
    p.add_argument("--sampler", choices=("hmc", "rwm"), default="hmc")
    p.add_argument("--metric", choices=("diag", "dense"), default="diag")
    p.add_argument("--target-accept", type=float, default=0.9,
                   help="step-size adaptation target for hmc")
    p.add_argument("--workers", type=int, default=1, help="processes for running chains")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfp", description="Kinetic flux profiling toolkit")
    parser.add_argument("--version", action="version", version=f"kfp {__version__}")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a pathway file")
    p.add_argument("pathway")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compile", help="matrices and free-parameter layout")
    p.add_argument("pathway")
    _model_flags(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("analyze", help="identifiability and fast-slow report")
    p.add_argument("pathway")
    _model_flags(p)
    p.add_argument("--threshold", type=float, default=10.0, help="fast-slow turnover ratio")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="unlabeled-proportion trajectory")
    p.add_argument("pathway")
    _model_flags(p)
    p.add_argument("--times", help="comma-separated output times")
    p.add_argument("--t-max", type=float)
    p.add_argument("--n-times", type=int, default=101)
    p.add_argument("--method", choices=("exact", "numeric"), default="exact")
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--plot", action="store_true", help="also write trajectory.svg")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="synthetic noisy measurements")
    p.add_argument("pathway", nargs="?")
    p.add_argument("--figure", choices=sorted(FIGURES))
    _model_flags(p)
    p.add_argument("--timepoints", type=int, default=10)
    p.add_argument("--t-max", type=float)
    p.add_argument("--noise", type=float, default=0.025, help="relative noise sd")
    p.add_argument("--replicates", type=int, default=3)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="Bayesian parameter estimation")
    p.add_argument("--pathway", required=True)
    p.add_argument("--data", required=True)
    _sampler_flags(p)
    p.add_argument("--prior", action="append", help="name=lo,hi uniform prior (repeatable)")
    p.add_argument("--plot", action="store_true", help="also write posterior.svg")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reproduce", help="synthetic-data grid for a built-in figure fixture")
    p.add_argument("figure")
    _sampler_flags(p)
    p.add_argument("--noise-levels", help="comma separated (default 0.025,0.05,0.1)")
    p.add_argument("--timepoints", help="comma separated (default 3,5,10)")
    p.add_argument("--t-max", type=float, help="default: 10 / min(k)")
    p.set_defaults(func=cmd_reproduce)

    for sp in sub.choices.values():
        _common(sp, top=False)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args, argv)
    try:
        code = args.func(args, run)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.out:
        run.write_manifest(Path(args.out))
    elif args.command in ("fit", "reproduce"):
        run.write_manifest(Path(args.out or ("." if args.command == "fit" else args.figure)))
    return code


if __name__ == "__main__":
    sys.exit(main())
