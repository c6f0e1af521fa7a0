"""``kcontract`` command line: compounds, certification, simulation and the
biochemical-circuit reproduction harness.

Exit codes: 0 success / certified, 2 not certified, 1 any error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .certify import (
    Certificate, DomainGrid, ari_constant_theta, certify_biochem, certify_networked,
    certify_thm1,
)
from .compound import add_compound, mult_compound
from .expr import ExprError
from .model import (
    EXAMPLE31_BOUNDS, Box, GlsModel, ModelError, NetworkedModel, example31, load_config,
)
from .sim import (
    SimConfig, SimulationError, detect_equilibrium, equilibrium_residual_1d,
    equilibrium_roots, fig2_initials, integrate, integrate_with_variational, log_slope, random_frame,
    sample_initials, write_trajectory_csv, write_volume_csv,
)
from .svg import write_plot

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED = 0, 1, 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- io

def read_matrix_csv(path) -> np.ndarray:
    """Comma-separated rows; blank lines and ``#`` comments are skipped."""
    rows, width = [], None
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise CliError(f"{path}:{lineno}: not a comma-separated list of numbers") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise CliError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
        rows.append(row)
    if not rows:
        raise CliError(f"{path}: empty matrix")
    return np.array(rows)


def write_matrix_csv(path, M: np.ndarray):
    text = "\n".join(",".join(f"{v:.17g}" for v in row) for row in M) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def write_manifest(out: Path, command: str, config: str | None, seed: int | None, argv) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "output_dir": str(out),
        "seed": seed,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "argv": list(argv),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _parse_vec(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise CliError(f"cannot parse vector {text!r}") from None


def _parse_box(text: str, n: int) -> Box:
    lo, _, hi = text.partition(":")
    if not hi:
        raise CliError(f"box must be LOW:HIGH, got {text!r}")
    low, high = _parse_vec(lo), _parse_vec(hi)
    if low.size == 1:
        low = np.full(n, low[0])
    if high.size == 1:
        high = np.full(n, high[0])
    return Box(tuple(low), tuple(high))


# ------------------------------------------------------------ commands

def cmd_compound(args) -> int:
    A = read_matrix_csv(args.matrix)
    if args.mode == "add" and A.shape[0] != A.shape[1]:
        raise CliError(f"{args.matrix}: additive compound needs a square matrix, got {A.shape}")
    M = mult_compound(A, args.k) if args.mode == "mult" else add_compound(A, args.k)
    write_matrix_csv(args.out, M)
    return EXIT_OK


def _certify_model(model, metric, cfg: dict, args) -> Certificate:
    ccfg = dict(cfg.get("certify", {}))
    mode = args.mode or ccfg.get("mode", "auto")
    k = args.k
    if isinstance(model, NetworkedModel) and mode in ("auto", "networked", "biochem"):
        if mode == "biochem" or (mode == "auto" and model.family == "biochem"):
            if model.r_prime_bound is None or model.derivative_bounds is None:
                raise CliError("biochem certification needs r_prime_bound and d bounds")
            return certify_biochem(model.r_prime_bound, model.derivative_bounds, k)
        return certify_networked(model, k)
    gls = model.as_gls() if isinstance(model, NetworkedModel) else model
    if gls.state_domain is None:
        raise CliError("sampled certification needs a state_domain")
    ppa = args.grid if args.grid is not None else int(ccfg.get("points_per_axis", 5))
    refine = args.refine if args.refine is not None else int(ccfg.get("refine", 0))
    use_u = args.u_scope != "closed-loop"
    grid = DomainGrid.for_model(gls, ppa, refine, args.seed, use_input_domain=use_u)
    if mode == "ari":
        P = ccfg.get("P")
        if P is None:
            if not metric.is_constant:
                raise CliError("ari mode needs a constant metric or certify.P")
            Th = metric.constant_matrix()
            P = Th.T @ Th
        return ari_constant_theta(gls, np.asarray(P, dtype=float), k, grid)
    if mode not in ("auto", "thm1"):
        raise CliError(f"mode {mode!r} does not apply to this model")
    return certify_thm1(gls, metric, k, grid)


def cmd_certify(args) -> int:
    out = Path(args.out)
    write_manifest(out, "certify", args.config, args.seed, args.argv)
    model, metric, cfg = load_config(args.config)
    cert = _certify_model(model, metric, cfg, args)
    (out / "certificate.json").write_text(cert.to_json() + "\n")
    print(cert.summary())
    return EXIT_OK if cert.certified else EXIT_NOT_CERTIFIED


def _initials(args, model, cfg) -> np.ndarray:
    n = model.n
    if args.x0:
        pts = [_parse_vec(s) for s in args.x0]
        for p in pts:
            if p.size != n:
                raise CliError(f"x0 {p.tolist()} has {p.size} entries, expected {n}")
        return np.array(pts)
    if args.sample:
        if args.box:
            box = _parse_box(args.box, n)
        elif "sample_box" in cfg:
            box = Box.from_dict(cfg["sample_box"])
        elif model.state_domain is not None and model.state_domain.bounded:
            box = model.state_domain
        else:
            raise CliError("no bounded box to sample from; pass --box LOW:HIGH")
        return sample_initials(box, args.sample, args.seed)
    raise CliError("give --x0 or --sample")


def _component_plot(path, traj, title):
    series = [(traj.times, traj.states[:, i], f"x{i + 1}") for i in range(traj.states.shape[1])]
    write_plot(path, series, title=title, xlabel="t", ylabel="state")


def cmd_simulate(args) -> int:
    out = Path(args.out)
    write_manifest(out, "simulate", args.config, args.seed, args.argv)
    model, metric, cfg = load_config(args.config)
    X0 = _initials(args, model, cfg)
    sc = SimConfig(args.tend, rtol=args.rtol, atol=args.atol, seed=args.seed)
    summary, failures = [], 0
    for i, x0 in enumerate(X0, start=1):
        entry = {"index": i, "x0": x0.tolist()}
        try:
            if args.volume:
                W0 = random_frame(model.n, args.volume, args.seed + i)
                gls = model.as_gls() if isinstance(model, NetworkedModel) else model
                traj, vol = integrate_with_variational(model, x0, W0, sc, metric=metric if gls is model else None)
                write_volume_csv(out / f"volume_{i}.csv", vol)
                half = vol.times >= vol.times[-1] / 2
                entry.update(logvol_start=float(vol.logvol[0]), logvol_end=float(vol.logvol[-1]),
                             logvol_slope_final_half=log_slope(vol.times[half], vol.logvol[half]))
            else:
                traj = integrate(model, x0, sc)
        except (SimulationError, ExprError, ValueError) as exc:
            failures += 1
            entry["error"] = str(exc)
            print(f"trajectory {i}: FAILED: {exc}", file=sys.stderr)
            summary.append(entry)
            continue
        write_trajectory_csv(out / f"trajectory_{i}.csv", traj)
        e = detect_equilibrium(traj, model, args.eq_tol)
        entry.update(steps=traj.steps, rejected=traj.rejected, final=traj.final.tolist(),
                     equilibrium=None if e is None else e.tolist())
        if args.plot:
            _component_plot(out / f"trajectory_{i}.svg", traj, f"trajectory {i}")
        summary.append(entry)
        print(f"trajectory {i}: {traj.steps} steps, equilibrium "
              f"{'none' if e is None else np.array2string(e, precision=6)}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_ERROR if failures else EXIT_OK


def cmd_reproduce_biochem(args) -> int:
    out = Path(args.out)
    write_manifest(out, "reproduce-biochem", None, args.seed, args.argv)
    lines = ["# Biochemical feedback circuit: reproduction report", ""]

    lines += ["## 2-contraction certificate", "",
              "| derivative bounds for d1' | alpha_2 | verdict | eta1 | eta2 | rate |",
              "|---|---|---|---|---|---|"]
    certs = {}
    for label in ("implied", "literal"):
        net = example31(label)
        c = certify_biochem(net.r_prime_bound, net.derivative_bounds, 2)
        certs[label] = c
        (out / f"certificate_{label}.json").write_text(c.to_json() + "\n")
        lo, hi = EXAMPLE31_BOUNDS[label][0]
        lines.append(f"| [{lo:g}, {hi:g}] ({label}) | {c.details['alpha_k']:.6g} | {c.verdict} "
                     f"| {c.eta1:.6g} | {c.eta2:.6g} | {c.rate:.6g} |")
    lines += ["",
              "Reference value: alpha_2 = 3/2 > 1, hence 2-contraction.",
              f"Computed with d1' in [0, 1]: alpha_2 = {certs['implied'].details['alpha_k']:.6g} "
              f"({certs['implied'].verdict}).",
              f"Computed with d1' = cos(x1) in [-1, 1] on the nonnegative orthant: alpha_2 = "
              f"{certs['literal'].details['alpha_k']:.6g} ({certs['literal'].verdict}).",
              "",
              "Discrepancy: the stated value 3/2 is reproduced only under the bound "
              "d1' in [0, 1]. Since d1'(x1) = cos(x1) takes values down to -1 for x1 >= 0, "
              "the bound that holds on the whole orthant gives alpha_2 = 1, where the strict "
              "condition alpha_2 > 1 fails. Both figures are reported; the discrepancy is not "
              "resolved here.", ""]

    roots = equilibrium_roots(args.root_range)
    lines += ["## Equilibria", "",
              "Equilibria are e = (9 e3, 3 e3, e3) with sin(9 e3) + 1/2 - (1 + e3)/(2 + e3) = 0.", "",
              "| e3 | residual |", "|---|---|"]
    lines += [f"| {r:.12f} | {equilibrium_residual_1d(r):.3e} |" for r in roots]
    np.savetxt(out / "equilibrium_roots.csv",
               np.column_stack([roots, equilibrium_residual_1d(np.array(roots))]),
               fmt="%.17g", delimiter=",", header="e3,residual", comments="")

    net = example31("implied")
    sc = SimConfig(args.tend, rtol=args.rtol, atol=args.atol, seed=args.seed)
    lines += ["", f"## Trajectories (T = {args.tend:g}, seed {args.seed})", "",
              "| # | x0 | equilibrium | e1 - 9 e3 | e2 - 3 e3 | residual(e3) | logvol(0) | logvol(T) | slope (final half) |",
              "|---|---|---|---|---|---|---|---|---|"]
    series_x1, series_vol = [], []
    all_ok = True
    for i, x0 in enumerate(fig2_initials(args.seed), start=1):
        W0 = random_frame(3, 2, args.seed + i)
        traj, vol = integrate_with_variational(net, x0, W0, sc)
        write_trajectory_csv(out / f"trajectory_{i}.csv", traj)
        write_volume_csv(out / f"volume_{i}.csv", vol)
        e = detect_equilibrium(traj, net, 1e-6)
        half = vol.times >= vol.times[-1] / 2
        slope = log_slope(vol.times[half], vol.logvol[half])
        if e is None:
            all_ok = False
            eq, d1, d2, res = "none", "", "", ""
        else:
            eq = np.array2string(e, precision=6)
            d1, d2 = f"{e[0] - 9 * e[2]:.2e}", f"{e[1] - 3 * e[2]:.2e}"
            res = f"{equilibrium_residual_1d(e[2]):.2e}"
        lines.append(f"| {i} | {np.array2string(x0, precision=4)} | {eq} | {d1} | {d2} | {res} "
                     f"| {vol.logvol[0]:.4f} | {vol.logvol[-1]:.4f} | {slope:.4f} |")
        series_x1 += [(traj.times, traj.states[:, j], f"#{i} x{j + 1}") for j in range(3)]
        series_vol.append((vol.times, vol.logvol, f"#{i}"))
    lines += ["", "All five trajectories converge to an equilibrium." if all_ok
              else "Some trajectories did not settle within the horizon.", ""]
    if args.plot:
        write_plot(out / "trajectories.svg", series_x1[::1], title="trajectories", xlabel="t", ylabel="x")
        write_plot(out / "logvol.svg", series_vol, title="log 2-volume", xlabel="t", ylabel="log |W^(2)|")
        lines += ["Plots: trajectories.svg, logvol.svg", ""]
    (out / "report.md").write_text("\n".join(lines))
    print(f"report written to {out / 'report.md'}")
    return EXIT_OK


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kcontract", description="k-contraction analysis of generalized Lurie systems")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compound", help="multiplicative or additive compound of a CSV matrix")
    c.add_argument("matrix")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--mode", choices=("mult", "add"), default="mult")
    c.add_argument("--out", default="-", help="output CSV (default stdout)")
    c.set_defaults(func=cmd_compound)

    c = sub.add_parser("certify", help="certify k-contraction of a model config")
    c.add_argument("config")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--mode", choices=("auto", "thm1", "ari", "networked", "biochem"))
    c.add_argument("--grid", type=int, help="grid points per axis")
    c.add_argument("--refine", type=int, help="extra uniform random samples")
    c.add_argument("--u-scope", choices=("box", "closed-loop"), default="box",
                   help="sample u over the input box (default) or use u = -Phi(g(x))")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="kcontract-out")
    c.set_defaults(func=cmd_certify)

    c = sub.add_parser("simulate", help="integrate closed-loop trajectories")
    c.add_argument("config")
    c.add_argument("--x0", action="append", help="initial state, comma separated (repeatable)")
    c.add_argument("--sample", type=int, help="number of seeded uniform initial states")
    c.add_argument("--box", help="sampling box LOW:HIGH (scalars or comma vectors)")
    c.add_argument("--volume", type=int, metavar="K", help="also track k-volumes of the variational flow")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tend", type=float, default=200.0)
    c.add_argument("--rtol", type=float, default=1e-8)
    c.add_argument("--atol", type=float, default=1e-10)
    c.add_argument("--eq-tol", type=float, default=1e-6)
    c.add_argument("--plot", action="store_true")
    c.add_argument("--out", default="kcontract-out")
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("reproduce-biochem", help="reproduce the biochemical circuit example")
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--tend", type=float, default=200.0)
    c.add_argument("--rtol", type=float, default=1e-8)
    c.add_argument("--atol", type=float, default=1e-10)
    c.add_argument("--root-range", type=float, default=7.0, help="scan e3 in [0, R] for equilibria")
    c.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    c.add_argument("--out", default="kcontract-biochem")
    c.set_defaults(func=cmd_reproduce_biochem)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except (CliError, ModelError, ExprError, SimulationError, ValueError, OSError,
            np.linalg.LinAlgError) as exc:
        print(f"kcontract: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
