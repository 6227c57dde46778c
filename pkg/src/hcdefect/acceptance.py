"""The twelve acceptance checks, runnable from tests or ``hcdefect verify``."""
from __future__ import annotations

import filecmp
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import jn_zeros

from .assembly import Grid, assemble
from .bloch import spectral_distance
from .cell import (ZERO_MEAN, beta_direct, beta_series, compute_ahom, dirichlet_cell_eigs,
                   find_gaps)
from .config import ExperimentConfig, validate_config
from .eigensolve import smallest_eigs
from .geometry import CellGeometry
from .pipeline import Workspace, run_pipeline


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        items = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{tag}] {self.number:2d} {self.name}: {items}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return str(v)


def _order(hs, errs) -> float:
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


# -- 1-5: discretization and cell quantities ----------------------------------

def criterion_1() -> CriterionResult:
    exact = 2.0 * np.pi ** 2
    hs, lams = [1 / 16, 1 / 32, 1 / 64], []
    for h in hs:
        n = int(round(1 / h))
        pen = assemble(Grid((0.0, 1.0, 0.0, 1.0), n, n))
        lams.append(smallest_eigs(pen, 1).values[0])
    errs = [abs(x - exact) for x in lams]
    rel = errs[-1] / exact
    p = _order(hs, errs)
    ok = rel <= 5e-3 and abs(p - 2.0) <= 0.3
    return CriterionResult(1, "Dirichlet square oracle", ok,
                           {"lambda1(1/64)": lams[-1], "rel_err": rel, "order": p})


_CELL = {}


def _cell_table(h=1 / 256, J=40):
    key = (h, J)
    if key not in _CELL:
        _CELL[key] = dirichlet_cell_eigs(CellGeometry(0.3), 1.0, h, J)
    return _CELL[key]


def criterion_2() -> CriterionResult:
    t = _cell_table()
    oracle = (jn_zeros(0, 1)[0] / 0.3) ** 2
    rel = abs(t.lambdas[0] - oracle) / oracle
    cl = t.clusters()
    second = cl[1]
    means2 = np.abs(t.means[1:1 + second[2]])
    ok = rel <= 0.01 and second[2] == 2 and bool(np.all(means2 <= 1e-6))
    return CriterionResult(2, "Cell spectrum vs Bessel zero", ok,
                           {"lambda1": t.lambdas[0], "oracle": oracle, "rel_err": rel,
                            "lambda2_multiplicity": second[2],
                            "max|<phi2>|": float(means2.max())})


def criterion_3() -> CriterionResult:
    t = _cell_table()
    cell = CellGeometry(0.3)
    gaps = find_gaps(t, 0.999 * t.valid_below)[:2]
    worst, honored, plain_worst = 0.0, True, 0.0
    for g in gaps:
        for f in (np.arange(10) + 0.5) / 10:
            lam = g.lo + f * g.width
            d = beta_direct(cell, 1.0, lam, t.h)
            s, bound = beta_series(t, lam)
            worst = max(worst, abs(s - d) / abs(d))
            honored &= abs(s - d) <= bound
            plain_worst = max(plain_worst, abs(beta_series(t, lam, accelerate=False)[0] - d)
                              / abs(d))
    ok = worst <= 1e-3 and honored and len(gaps) == 2
    return CriterionResult(3, "beta series vs direct", ok,
                           {"points": 10 * len(gaps), "worst_rel": worst,
                            "bound_honored": bool(honored), "J": t.J,
                            "plain_partial_sum_worst_rel": plain_worst})


def _check_beta_structure(t, lam_max):
    ok_zero = beta_series(t, 0.0)[0] == 0.0
    # every table eigenvalue splits the axis: weak-mean modes are tiny poles too
    poles = np.array([c[0] for c in t.clusters()])
    edges = [0.0] + [p for p in poles if p < lam_max] + [lam_max]
    mono = True
    for a, b in zip(edges[:-1], edges[1:]):
        x = np.linspace(a, b, 402)[1:-1]
        x = x[np.all(np.abs(x[:, None] - poles[None, :]) > 1e-5 * poles[None, :], axis=1)]
        v = beta_series(t, x)[0]
        mono &= bool(np.all(np.diff(v) >= -1e-12 * np.maximum(np.abs(v[1:]), 1.0)))
    gaps = find_gaps(t, lam_max)
    first_sig = float(t.lambdas[np.argmax(t.mean_sq >= ZERO_MEAN)])
    opens = bool(gaps) and gaps[0].lo == first_sig
    ends = all(abs(beta_series(t, g.hi)[0]) <= 1e-8 * g.hi for g in gaps)
    return ok_zero, mono, opens, ends


def criterion_4() -> CriterionResult:
    t = _cell_table()
    fine = _check_beta_structure(t, 0.999 * t.valid_below)
    cfg = ExperimentConfig()
    lat = dirichlet_cell_eigs(CellGeometry(cfg.inclusion_radius), cfg.a0, cfg.cell_h, cfg.J,
                              check_resolution=False)
    coarse = _check_beta_structure(lat, 4.0 * float(lat.poles().max()))
    names = ("beta0_zero", "monotone", "opens_at_first_pole", "zero_at_hi")
    detail = {n: bool(a and b) for n, a, b in zip(names, fine, coarse)}
    return CriterionResult(4, "beta structure", all(detail.values()), detail)


def criterion_5(n_perturb: int = 10, seed: int = 7) -> CriterionResult:
    cell = CellGeometry(0.3)
    a1 = 1.0
    A = compute_ahom(cell, a1, 1 / 256)
    m = A.matrix
    q1 = a1 * A.area_q1
    sym = A.raw_asymmetry <= 1e-12
    iso = abs(m[0, 0] - m[1, 1]) <= 1e-3 * m[0, 0] and abs(m[0, 1]) <= 1e-6 * m[0, 0]
    bounds = 0.0 < m[0, 0] <= q1 * (1 + 1e-6)
    rng = np.random.default_rng(seed)
    active = np.flatnonzero(np.abs(A.K.diagonal()) > 0)
    worst = 0.0
    for i in range(2):
        w = A.correctors[i]
        e0 = A.energy(i, w)
        for _ in range(n_perturb):
            d = np.zeros_like(w)
            d[active] = rng.standard_normal(active.size)
            d *= 1e-2 * np.abs(w).max() / np.abs(d).max()
            for s in (1.0, -1.0):
                worst = max(worst, (e0 - A.energy(i, w + s * d)) / abs(e0))
    optimal = worst <= 1e-8
    ok = sym and iso and bounds and optimal
    return CriterionResult(5, "homogenized matrix", ok,
                           {"A11": m[0, 0], "A22": m[1, 1], "A12": m[0, 1],
                            "asymmetry": A.raw_asymmetry, "a1|Q1|": q1,
                            "max_energy_drop": worst})


# -- 6-12: the default pipeline ------------------------------------------------

class PipelineRuns:
    """Two independent runs of the default config, shared by criteria 6-12."""

    def __init__(self, workdir=None, cfg: ExperimentConfig | None = None):
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="hcdefect-accept-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.cfg = cfg or validate_config({})
        self.ws = Workspace(self.cfg)
        self.manifest_a = run_pipeline(self.cfg, self.workdir / "run_a", workspace=self.ws)
        self.manifest_b = run_pipeline(self.cfg, self.workdir / "run_b")


def criterion_6(runs: PipelineRuns) -> CriterionResult:
    ws = runs.ws
    modes = ws.limit_modes()
    cm = ws.coupled()
    gap = ws.gap()
    red = sorted(m.lambda0 for m in modes)
    red_count = sum(1 for _ in modes)
    cpl = sorted(cm.values)
    tol = max(1e-3 * gap.width, 10 * max((m.residual for m in modes), default=0.0))
    dev = max((abs(a - b) for a, b in zip(red, cpl)), default=float("inf"))
    ok = red_count == len(cpl) == cm.info["count"] and red_count > 0 and dev <= tol
    return CriterionResult(6, "limit mode cross-oracle", ok,
                           {"reduction": red, "coupled": cpl, "max_dev": dev, "tol": tol,
                            "Jc_used": cm.info["Jc"]})


def criterion_7(runs: PipelineRuns) -> CriterionResult:
    res = runs.ws.sweep()
    errs = [r.err_lambda for r in res.records]
    dec = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    ok = dec and res.order_lambda >= 0.4
    return CriterionResult(7, "eigenvalue convergence", ok,
                           {"err": errs, "order": res.order_lambda})


def criterion_8(runs: PipelineRuns) -> CriterionResult:
    ws = runs.ws
    res = ws.sweep()
    md = ws.mode()
    bound = 0.8 * np.sqrt(-md.beta0 / ws.cfg.a1)
    alphas = [r.alpha_fit for r in res.records]
    spread = (max(alphas) - min(alphas)) / np.mean(alphas)
    ok = all(a >= bound for a in alphas) and spread <= 0.15
    return CriterionResult(8, "uniform exponential decay", ok,
                           {"alpha": alphas, "0.8*sqrt(-beta/a1)": float(bound),
                            "spread": float(spread)})


def criterion_9(runs: PipelineRuns) -> CriterionResult:
    res = runs.ws.sweep()
    errs = [r.two_scale_err for r in res.records]
    dec = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    ok = dec and errs[-1] < 0.2
    return CriterionResult(9, "strong two-scale convergence", ok, {"err": errs})


def criterion_10(runs: PipelineRuns) -> CriterionResult:
    ws = runs.ws
    res = ws.sweep()
    mult = sum(m.cluster_size for m in ws.limit_modes()
               if abs(m.lambda0 - ws.mode().lambda0) <= res.radius)
    counts = [res.counts[e] for e in ws.cfg.eps_list]
    ok = all(c == mult for c in counts)
    return CriterionResult(10, "multiplicity", ok,
                           {"limit_multiplicity": mult, "inertia_counts": counts,
                            "radius": res.radius})


def criterion_11(runs: PipelineRuns) -> CriterionResult:
    ws = runs.ws
    lim = ws.limit_spectrum()
    res = ws.sweep()
    dists, outside = [], True
    for e in ws.cfg.eps_list:
        bs = ws.bands(e)
        dists.append(spectral_distance(bs, lim))
        iv = bs.band_intervals
        for f in res.modes[e]:
            outside &= not bool(np.any((iv[:, 0] <= f.lambda_eps) & (f.lambda_eps <= iv[:, 1])))
    dec = all(b < a for a, b in zip(dists[:-1], dists[1:]))
    ok = dec and outside
    return CriterionResult(11, "Hausdorff spectral convergence", ok,
                           {"d_H": dists, "gap_eigs_outside_bands": bool(outside),
                            "window": lim.lam_max})


def criterion_12(runs: PipelineRuns) -> CriterionResult:
    a = runs.workdir / "run_a"
    b = runs.workdir / "run_b"
    names = sorted(p.name for p in a.iterdir())
    same_set = names == sorted(p.name for p in b.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    identical = same_set and not mismatch and not errors
    g = runs.manifest_a.golden
    golden_ok = bool(g.get("applicable")) and bool(g.get("ok"))
    detail = {"files": len(names), "identical": identical, "golden_applicable":
              bool(g.get("applicable")), "golden_ok": golden_ok}
    if g.get("applicable"):
        detail["worst_rel"] = max(v["rel_err"] for v in g["items"].values())
    return CriterionResult(12, "determinism and golden values", identical and golden_ok, detail)


CELL_CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5)
RUN_CRITERIA = (criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
                criterion_11, criterion_12)


def run_all(workdir=None, echo=print) -> list[CriterionResult]:
    out = []
    for c in CELL_CRITERIA:
        out.append(_guard(c))
        echo(out[-1].line())
    runs = PipelineRuns(workdir)
    for c in RUN_CRITERIA:
        out.append(_guard(c, runs))
        echo(out[-1].line())
    return out


def _guard(fn, *args) -> CriterionResult:
    n = int(fn.__name__.rsplit("_", 1)[1])
    try:
        return fn(*args)
    except Exception as exc:    # noqa: BLE001 - a crash is a failed criterion
        return CriterionResult(n, fn.__name__, False, {"error": f"{type(exc).__name__}: {exc}"})
