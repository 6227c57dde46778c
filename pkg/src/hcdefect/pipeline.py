"""Stage runner: cell problem, limit mode, eps-sweep, Bloch bands, manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import pickle
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import Grid
from .bloch import band_structure, limit_spectrum, outside_bands, spectral_distance
from .cell import (POLE_RTOL, BetaTable, GapInterval, HomogenizedMatrix, beta_series,
                   compute_ahom, degenerate_points, dirichlet_cell_eigs, find_gaps)
from .config import ConfigError, ExperimentConfig
from .fine import ConvergenceRecord, eps_sweep
from .io import write_csv, write_field, write_json
from .limit import (DefectMode, DirectBeta, LimitProblem, NonlinearPencilTrace,
                    coupled_modal_solve, limit_decay_fit, solve_limit_mode)

log = logging.getLogger(__name__)

CELL_KEYS = ("a0", "a1", "inclusion_radius", "h_cell", "m", "J")
GOLDEN_RTOL = 1e-8


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"stage {stage!r} failed: {exc}")


class Workspace:
    """Lazily computed objects shared by the stages and the CLI subcommands."""

    def __init__(self, cfg: ExperimentConfig, cache_dir=None, workers: int = 1):
        self.cfg = cfg
        self.spec = cfg.medium()
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.workers = max(1, int(workers))
        self.cache_hits: dict[str, bool] = {}
        self._memo: dict = {}

    # -- cell level -------------------------------------------------------
    def _cached(self, name, build):
        if name in self._memo:
            return self._memo[name]
        path = None
        if self.cache_dir is not None:
            key = self.cfg.hash(CELL_KEYS)
            path = self.cache_dir / f"{name}-{key}.pkl"
            if path.exists():
                with open(path, "rb") as fh:
                    self._memo[name] = pickle.load(fh)
                self.cache_hits[name] = True
                return self._memo[name]
        obj = build()
        self.cache_hits[name] = False
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                pickle.dump(obj, fh)
            tmp.replace(path)
        self._memo[name] = obj
        return obj

    @property
    def check_resolution(self) -> bool:
        # the lattice-consistent cell is deliberately coarse (one cell element per
        # fine element), so the resolution rule applies only to free choices
        return not self.cfg.lattice_consistent

    def table(self) -> BetaTable:
        c = self.cfg
        return self._cached("beta_table", lambda: dirichlet_cell_eigs(
            self.spec.cell, c.a0, c.cell_h, c.J, check_resolution=self.check_resolution))

    def ahom(self) -> HomogenizedMatrix:
        c = self.cfg
        return self._cached("ahom", lambda: compute_ahom(
            self.spec.cell, c.a1, c.cell_h, check_resolution=self.check_resolution))

    def gaps(self) -> list[GapInterval]:
        if "gaps" not in self._memo:
            t = self.table()
            if self.cfg.lambda_max is not None:
                lm = min(self.cfg.lambda_max, t.valid_below)
            elif np.isfinite(t.valid_below):
                lm = t.valid_below
            else:
                lm = 2.0 * float(t.poles().max())
            self._memo["gaps"] = find_gaps(t, lm)
        return self._memo["gaps"]

    def gap(self) -> GapInterval:
        gaps = self.gaps()
        if self.cfg.gap_index >= len(gaps):
            raise ConfigError([f"gap_index: {self.cfg.gap_index} but only {len(gaps)} gap(s) "
                               f"were found"])
        return gaps[self.cfg.gap_index]

    def window(self) -> float:
        """Upper end of the band window [0, Lambda]."""
        if self.cfg.lambda_max is not None:
            return self.cfg.lambda_max
        return min(2.0 * self.gap().hi, self.table().valid_below)

    # -- limit level ------------------------------------------------------
    def macro_grid(self) -> Grid:
        return Grid.square(self.cfg.L, self.cfg.h_macro)

    def problem(self) -> LimitProblem:
        if "problem" not in self._memo:
            self._memo["problem"] = LimitProblem(self.spec, self.ahom(), self.macro_grid())
        return self._memo["problem"]

    def beta(self) -> DirectBeta:
        return DirectBeta(self.table().operator)

    def limit_modes(self) -> list[DefectMode]:
        if "modes" not in self._memo:
            trace = NonlinearPencilTrace()
            beta = self.beta()
            modes = solve_limit_mode(self.spec, self.ahom(), beta, self.gap(),
                                     self.macro_grid(), self.cfg.n_scan, self.problem(), trace)
            for md in modes:
                limit_decay_fit(md, self.ahom(), beta, self.cfg.a1,
                                r_inner=self.spec.defect.extent)
            self._memo["modes"] = modes
            self._memo["trace"] = trace
        return self._memo["modes"]

    def trace(self) -> NonlinearPencilTrace:
        self.limit_modes()
        return self._memo["trace"]

    def coupled(self):
        if "coupled" not in self._memo:
            self._memo["coupled"] = coupled_modal_solve(self.spec, self.ahom(), self.table(),
                                                        self.cfg.Jc, self.gap(),
                                                        self.macro_grid(), self.problem())
        return self._memo["coupled"]

    def mode(self) -> DefectMode:
        modes = self.limit_modes()
        if not modes:
            raise RuntimeError("no limit eigenvalue in the selected gap")
        return modes[0]

    # -- fine level -------------------------------------------------------
    def sweep(self):
        if "sweep" not in self._memo:
            c = self.cfg
            self._memo["sweep"] = eps_sweep(self.spec, self.mode(), c.eps_list, c.L_fine, c.m,
                                            dof_cap=c.dof_cap)
        return self._memo["sweep"]

    def bands(self, eps: float):
        key = ("bands", eps)
        if key not in self._memo:
            c = self.cfg
            self._memo[key] = band_structure(eps, self.spec, c.m, c.k_bands, c.n_theta,
                                             c.n_path, self.workers,
                                             check_resolution=self.check_resolution)
        return self._memo[key]

    def limit_spectrum(self):
        return limit_spectrum(self.table(), self.window())


# -- stage writers ---------------------------------------------------------

def cell_outputs(ws: Workspace, out: Path) -> dict:
    t = ws.table()
    a = ws.ahom()
    rows = [(j + 1, lam, msq) for j, (lam, msq) in enumerate(zip(t.lambdas, t.mean_sq))]
    files = [write_csv(out / "cell_eigs.csv", ("j", "lambda_j", "mean_sq"), rows)]
    files.append(write_json(out / "gaps.json", gaps_payload(ws)))
    files.append(write_json(out / "ahom.json", {
        "matrix": a.matrix, "a1": a.a1, "area_q1": a.area_q1, "h_cell": ws.cfg.cell_h}))
    files.append(beta_outputs(ws, out))
    return {"files": files, "gap": {"lo": ws.gap().lo, "hi": ws.gap().hi},
            "ahom": a.matrix.tolist()}


def gaps_payload(ws: Workspace) -> dict:
    t = ws.table()
    return {"gaps": [{"lo": g.lo, "hi": g.hi, "left_pole": g.left_pole, "kind": g.kind}
                     for g in ws.gaps()],
            "degenerate_points": degenerate_points(t, ws.window()),
            "J": t.J, "complete": t.complete, "remaining_mass": t.remaining_mass,
            "h_cell": t.h}


def beta_samples(ws: Workspace, n: int = 200):
    t = ws.table()
    beta = ws.beta()
    lam = np.linspace(0.0, ws.window(), n + 1)
    poles = np.concatenate([t.poles(), t.zero_mean_points()])
    keep = [x for x in lam if not np.any(np.abs(x - poles) <= 10 * POLE_RTOL * max(x, 1.0))]
    rows = []
    for x in keep:
        s, bound = beta_series(t, x)
        rows.append((x, beta(x), s, bound))
    return rows


def beta_outputs(ws: Workspace, out: Path) -> Path:
    return write_csv(out / "beta.csv", ("lambda", "beta_direct", "beta_series", "tail_bound"),
                     beta_samples(ws))


def limit_outputs(ws: Workspace, out: Path) -> dict:
    modes = ws.limit_modes()
    files = []
    info = []
    for i, md in enumerate(modes):
        info.append({"lambda0": md.lambda0, "cluster_size": md.cluster_size, "nu": md.nu,
                     "residual": md.residual, "beta0": md.beta0,
                     "truncation_bound": md.truncation_bound, "decay_fit": md.decay_fit})
        files.append(write_field(out / f"limit_u0_{i}.csv", md.grid.dof_coords(), md.u0))
    rows = ws.trace().rows()
    files.append(write_csv(out / "limit_trace.csv", ("lambda", "beta", "n_negative", "k", "nu"),
                           rows))
    cm = ws.coupled()
    agree = _cluster_agreement([m.lambda0 for m in modes], list(cm.values), ws.gap())
    files.append(write_json(out / "limit_modes.json", {
        "gap": {"lo": ws.gap().lo, "hi": ws.gap().hi}, "modes": info,
        "coupled_modal": {"values": list(cm.values), "count": cm.info["count"],
                          "Jc": cm.info["Jc"]},
        "cross_check": agree}))
    return {"files": files, "lambda0": [m.lambda0 for m in modes], "cross_check": agree}


def _cluster_agreement(a, b, gap: GapInterval, rtol: float = 1e-3) -> dict:
    tol = rtol * gap.width
    a = sorted(a)
    b = sorted(b)
    ok = len(a) == len(b) and all(abs(x - y) <= tol for x, y in zip(a, b))
    dev = max((abs(x - y) for x, y in zip(a, b)), default=0.0)
    return {"count_reduction": len(a), "count_coupled": len(b), "max_deviation": dev,
            "tolerance": tol, "agree": bool(ok)}


def sweep_outputs(ws: Workspace, out: Path) -> dict:
    res = ws.sweep()
    recs = res.records
    if not ws.cfg.record_timings:
        recs = [ConvergenceRecord(*r.row()[:-1], float("nan")) for r in recs]
    files = [write_csv(out / "sweep.csv", ConvergenceRecord.HEADER, [r.row() for r in recs])]
    md = ws.mode()
    fits = {str(e): [f.decay_fit for f in fms] for e, fms in res.modes.items()}
    files.append(write_json(out / "sweep.json", {
        "lambda0": md.lambda0, "beta0": md.beta0, "multiplicity": md.cluster_size,
        "matching_radius": res.radius, "counts": {str(k): v for k, v in res.counts.items()},
        "order_lambda": res.order_lambda, "order_two_scale": res.order_two_scale,
        "decay_fits": fits}))
    for e, fms in res.modes.items():
        n = int(round(1.0 / e))
        files.append(write_field(out / f"u_eps_{n}.csv", fms[0].grid.dof_coords(),
                                 fms[0].u_eps))
    return {"files": files}


def bands_outputs(ws: Workspace, out: Path) -> dict:
    lim = ws.limit_spectrum()
    files, report = [], []
    sweep = ws._memo.get("sweep")
    for e in ws.cfg.eps_list:
        bs = ws.bands(e)
        n = int(round(1.0 / e))
        hdr = ("theta1", "theta2") + tuple(f"lam{j + 1}" for j in range(bs.k))
        files.append(write_csv(out / f"bands_eps_{n}.csv", hdr,
                               [tuple(t) + tuple(r) for t, r in zip(bs.thetas, bs.bands)]))
        entry = {"eps": e, "d_H": spectral_distance(bs, lim), "covers_window": bs.covers(lim.lam_max),
                 "band_intervals": bs.band_intervals}
        if sweep is not None and e in sweep.modes:
            lams = [f.lambda_eps for f in sweep.modes[e]]
            entry["gap_eigenvalues"] = lams
            entry["outside_bands"] = outside_bands(lams, bs)
        report.append(entry)
    files.append(write_json(out / "spectra_compare.json", {
        "window": lim.lam_max, "limit_bands": lim.band_set, "limit_points": lim.point_set,
        "per_eps": report}))
    return {"files": files, "d_H": [r["d_H"] for r in report]}


# -- manifest and golden values -------------------------------------------

def load_golden() -> dict:
    return json.loads(resources.files("hcdefect").joinpath("golden.json").read_text())


def golden_compare(cfg: ExperimentConfig, values: dict) -> dict:
    g = load_golden()
    if g.get("config_hash") != cfg.hash():
        return {"applicable": False}
    out = {"applicable": True, "rtol": GOLDEN_RTOL, "items": {}}
    ok = True
    for key in ("lambda0", "gap_lo", "gap_hi", "ahom"):
        if key not in values:
            continue
        got = np.asarray(values[key], dtype=float)
        ref = np.asarray(g[key], dtype=float)
        err = float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-300)))
        # off-diagonal A^hom entries vanish; compare them on the scale of the diagonal
        if key == "ahom":
            err = float(np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
        good = err <= GOLDEN_RTOL
        out["items"][key] = {"value": got, "golden": ref, "rel_err": err, "ok": good}
        ok &= good
    out["ok"] = bool(ok)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    stages: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    golden: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    defaults_applied: list = field(default_factory=list)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.stages.items() if v["status"] == "failed"]

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "version": self.version,
                "stages": self.stages, "files": self.files, "golden": self.golden,
                "config": self.config, "defaults_applied": self.defaults_applied}


STAGES = ("cell", "limit", "sweep", "bands")


def run_pipeline(cfg: ExperimentConfig, out_dir, cache_dir=None, workers: int = 1,
                 stages=STAGES, workspace: Workspace | None = None) -> RunManifest:
    """Run the stages in order; a failure skips everything downstream.

    Outputs are deterministic: wall-clock timings appear only when
    ``record_timings`` is set, and paths are recorded relative to ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ws = workspace if workspace is not None else Workspace(cfg, cache_dir, workers)
    man = RunManifest(cfg.hash(), __version__, config=cfg.to_dict(),
                      defaults_applied=list(cfg.defaults_applied))
    writers = {"cell": cell_outputs, "limit": limit_outputs, "sweep": sweep_outputs,
               "bands": bands_outputs}
    values: dict = {}
    failed = None
    for st in STAGES:
        if st not in stages:
            man.stages[st] = {"status": "skipped", "reason": "not requested"}
            continue
        if failed is not None:
            man.stages[st] = {"status": "skipped", "reason": f"upstream stage {failed} failed"}
            continue
        if st in ("sweep", "bands") and not cfg.eps_list:
            man.stages[st] = {"status": "skipped", "reason": "empty eps_list"}
            continue
        t0 = time.perf_counter()
        try:
            res = writers[st](ws, out)
        except ConfigError:
            raise
        except Exception as exc:   # noqa: BLE001 - recorded in the manifest
            log.error("stage %s failed: %s", st, exc)
            man.stages[st] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            failed = st
            continue
        entry = {"status": "ok"}
        if st == "cell":
            entry["cache_hits"] = {k: ws.cache_hits.get(k, False) for k in ("beta_table", "ahom")}
            values.update(gap_lo=res["gap"]["lo"], gap_hi=res["gap"]["hi"], ahom=res["ahom"])
        if st == "limit":
            if res["lambda0"]:
                values["lambda0"] = res["lambda0"][0]
            entry["cross_check_agree"] = res["cross_check"]["agree"]
        if cfg.record_timings:
            entry["seconds"] = time.perf_counter() - t0
        man.stages[st] = entry
        for f in res["files"]:
            man.files[str(Path(f).relative_to(out))] = _sha256(Path(f))
        log.info("stage %s done", st)
    man.golden = golden_compare(cfg, values)
    man.files["manifest.json"] = "self"
    write_json(out / "manifest.json", man.to_dict())
    if failed is not None:
        err = man.stages[failed]["error"]
        raise StageError(failed, RuntimeError(err))
    return man
