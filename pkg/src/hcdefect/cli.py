"""Command line interface: ``hcdefect <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 acceptance failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bloch import BlochError
from .cell import CellError, PoleError, beta_series
from .config import ConfigError, load_config
from .eigensolve import SolverError
from .fine import FineError, fine_decay_fit, matching_radius, solve_eps_modes, two_scale_error
from .geometry import GeometryError
from .io import dumps, write_csv, write_field, write_json
from .limit import LimitError
from .pipeline import (StageError, Workspace, bands_outputs, beta_outputs, gaps_payload,
                       limit_outputs, run_pipeline, sweep_outputs)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("hcdefect")


def _workspace(args) -> Workspace:
    cfg = load_config(args.config, args.override, strict=args.strict)
    return Workspace(cfg, args.cache, args.workers)


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_cell_eigs(args):
    ws = _workspace(args)
    t = ws.table()
    rows = [(j + 1, lam, msq) for j, (lam, msq) in enumerate(zip(t.lambdas, t.mean_sq))]
    write_csv(_out(args) / "cell_eigs.csv", ("j", "lambda_j", "mean_sq"), rows)
    return {"J": t.J, "complete": t.complete, "lambda1": t.lambdas[0], "h_cell": t.h}


def cmd_beta(args):
    ws = _workspace(args)
    if args.at:
        t = ws.table()
        out = []
        for lam in args.at:
            s, bound = beta_series(t, lam)
            out.append({"lambda": lam, "beta_direct": ws.beta()(lam), "beta_series": s,
                        "tail_bound": bound})
        return {"values": out}
    beta_outputs(ws, _out(args))
    return {"file": "beta.csv"}


def cmd_gaps(args):
    ws = _workspace(args)
    payload = gaps_payload(ws)
    write_json(_out(args) / "gaps.json", payload)
    return {"gaps": payload["gaps"], "selected": {"lo": ws.gap().lo, "hi": ws.gap().hi}}


def cmd_ahom(args):
    ws = _workspace(args)
    a = ws.ahom()
    write_json(_out(args) / "ahom.json", {"matrix": a.matrix, "a1": a.a1,
                                          "area_q1": a.area_q1, "h_cell": ws.cfg.cell_h})
    return {"ahom": a.matrix, "raw_asymmetry": a.raw_asymmetry}


def cmd_limit_mode(args):
    ws = _workspace(args)
    res = limit_outputs(ws, _out(args))
    return {"lambda0": res["lambda0"], "cross_check": res["cross_check"]}


def cmd_eps_mode(args):
    ws = _workspace(args)
    c = ws.cfg
    md = ws.mode()
    eps = args.eps
    fms = solve_eps_modes(ws.spec, eps, md.lambda0, matching_radius(md), c.L_fine, c.m,
                          dof_cap=c.dof_cap)
    if not fms:
        raise FineError(f"no eigenvalue of the eps = {eps} problem near lambda0")
    out = _out(args)
    n = int(round(1.0 / eps))
    write_field(out / f"u_eps_{n}.csv", fms[0].grid.dof_coords(), fms[0].u_eps)
    fit = fine_decay_fit(fms[0], md.beta0, c.a1, ws.spec.defect.extent)
    rec = {"eps": eps, "lambda0": md.lambda0, "lambda_eps": [f.lambda_eps for f in fms],
           "residuals": [f.residual for f in fms],
           "two_scale_err": two_scale_error(fms, md, ws.spec), "decay_fit": fit}
    write_json(out / f"eps_mode_{n}.json", rec)
    return rec


def cmd_sweep(args):
    ws = _workspace(args)
    sweep_outputs(ws, _out(args))
    res = ws.sweep()
    return {"err_lambda": [r.err_lambda for r in res.records],
            "two_scale_err": [r.two_scale_err for r in res.records],
            "order_lambda": res.order_lambda, "counts": {str(k): v for k, v in res.counts.items()}}


def cmd_bands(args):
    ws = _workspace(args)
    out = _out(args)
    eps_list = [args.eps] if args.eps is not None else list(ws.cfg.eps_list)
    summary = {}
    for e in eps_list:
        bs = ws.bands(e)
        n = int(round(1.0 / e))
        hdr = ("theta1", "theta2") + tuple(f"lam{j + 1}" for j in range(bs.k))
        write_csv(out / f"bands_eps_{n}.csv", hdr,
                  [tuple(t) + tuple(r) for t, r in zip(bs.thetas, bs.bands)])
        summary[str(e)] = bs.band_intervals
    return {"band_intervals": summary}


def cmd_spectra_compare(args):
    ws = _workspace(args)
    res = bands_outputs(ws, _out(args))
    return {"d_H": res["d_H"], "eps": list(ws.cfg.eps_list)}


def cmd_run(args):
    cfg = load_config(args.config, args.override, strict=args.strict)
    man = run_pipeline(cfg, _out(args), args.cache, args.workers)
    return {"config_hash": man.config_hash, "stages": man.stages,
            "golden": {k: man.golden.get(k) for k in ("applicable", "ok")}}


def cmd_verify(args):
    from .acceptance import run_all
    results = run_all(args.out, echo=lambda s: print(s, flush=True))
    failed = [r.number for r in results if not r.passed]
    return {"passed": len(results) - len(failed), "failed": failed}


COMMANDS = {
    "cell-eigs": (cmd_cell_eigs, "Dirichlet eigenpairs of the inclusion and their means"),
    "beta": (cmd_beta, "sample beta(lambda) by series and by direct solve"),
    "gaps": (cmd_gaps, "gaps {beta < 0} of the limit spectrum"),
    "ahom": (cmd_ahom, "homogenized matrix of the matrix phase"),
    "limit-mode": (cmd_limit_mode, "limit eigenvalues in the selected gap, with cross-check"),
    "eps-mode": (cmd_eps_mode, "defect eigenpairs of one fine (finite eps) problem"),
    "sweep": (cmd_sweep, "eps-sweep against the limit mode"),
    "bands": (cmd_bands, "Bloch band functions at finite eps"),
    "spectra-compare": (cmd_spectra_compare, "Hausdorff distance of bands to the limit spectrum"),
    "run": (cmd_run, "full pipeline with manifest and golden comparison"),
    "verify": (cmd_verify, "run the acceptance suite"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (defaults if omitted)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="threads for band sweeps")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (JSON value); repeatable")
    common.add_argument("--cache", type=Path, help="directory for cached cell objects")
    common.add_argument("--strict", action="store_true", help="reject unknown config keys")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="hcdefect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "beta":
            sp.add_argument("--at", type=float, nargs="+", help="evaluate at these lambdas")
        if name == "eps-mode":
            sp.add_argument("--eps", type=float, required=True)
        if name == "bands":
            sp.add_argument("--eps", type=float, help="single eps instead of eps_list")
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return EXIT_SOLVER
    if isinstance(exc, PoleError):
        return EXIT_SOLVER
    if isinstance(exc, (ConfigError, GeometryError, FineError, BlochError, CellError,
                        FileNotFoundError)):
        return EXIT_VALIDATION
    if isinstance(exc, (SolverError, LimitError, np.linalg.LinAlgError, RuntimeError)):
        return EXIT_SOLVER
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        summary = fn(args)
    except Exception as exc:    # noqa: BLE001 - mapped to an exit code
        code = _exit_code(exc)
        errors = getattr(exc, "errors", None) or [str(exc)]
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return code
    sys.stdout.write(dumps(summary))
    if args.command == "verify" and summary["failed"]:
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
