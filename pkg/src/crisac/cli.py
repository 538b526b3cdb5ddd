"""Batch experiment runner: seeded scheme comparisons with CSV/JSON output.

Experiment families sweep transmit power, RIS size, MS antennas, RIS
placement, sensing time, and detector operating points over seeded channel
draws, run one of five design schemes per point, and persist flat records
plus a run manifest.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import math
import sys
import time
from dataclasses import dataclass

import click
import numpy as np

from . import __version__
from .scenario import (ScenarioConfig, config_hash, dbm_to_watt,
                       default_scenario, load_scenario, make_scenario,
                       place_nodes)
from .channels import (RisPhase, generate_channels, geometric_ms_link,
                       zero_ris_links)
from .sensing import (calibrate_threshold, detection_probability,
                      false_alarm_probability, sensing_lift, sensing_snr)
from .metrics import (SingularFimError, fim_position, ms_objectives,
                      p1_feasibility, peb, su_rate, weighted_peb)
from .bcd import (InfeasibleDesignError, bcd, epsilon_for, solve_w,
                  tau_search)
from .convex_core import principal_rank1

SCHEMES = ("proposed", "optimal_ris", "random_ris", "no_ris",
           "ss_specific_ris")
KINDS = ("power_sweep", "ris_sweep", "ms_antenna_sweep", "ris_location_grid",
         "roc", "tau_sweep", "convergence_cdf", "single_solve")

DEFAULT_GRIDS = {
    "power_sweep": (25.0, 30.0, 35.0),          # P_SBS [dBm]
    "ris_sweep": (8, 16, 32),                   # RIS elements
    "ms_antenna_sweep": (2, 4, 6),              # MS antennas
    "tau_sweep": (0.1, 0.3, 0.5),               # fraction of the frame
    "roc": (0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5),   # P_f points
}


# =====================================================================
# Specs and records
# =====================================================================


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    scheme: str
    grid: tuple
    seeds: tuple
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.grid:
            raise ValueError("experiment grid is empty")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be nonempty and distinct")
        if self.format not in ("csv", "json"):
            raise ValueError(f"unknown format {self.format!r}")


@dataclass(frozen=True)
class ResultRecord:
    scheme: str
    seed: int
    kind: str
    sweep: tuple            # grid coordinate(s) of this point
    weighted_min_sinr: float
    weighted_sum_sinr: float
    weighted_peb: float
    peb_ms: tuple           # per-MS position error bound
    rate_su: tuple          # per-SU achieved rate
    pd: float
    pf: float
    tau: float
    iterations: int
    wall_time: float
    feasible: bool
    status: str             # "ok" or an error summary


@dataclass(frozen=True)
class RocRecord:
    pf: float
    pd: float
    one_minus_pd: float
    scheme: str
    seed: int


CSV_COLUMNS = ("scheme", "seed", "kind", "sweep", "weighted_min_sinr",
               "weighted_sum_sinr", "weighted_peb", "peb_ms", "rate_su",
               "pd", "pf", "tau", "iterations", "wall_time", "feasible",
               "status")
ROC_HEADER = "pf,pd,one_minus_pd,scheme,seed"


# =====================================================================
# Scheme designs
# =====================================================================


@dataclass(frozen=True)
class _Design:
    tau: float
    epsilon: float
    w_mat: np.ndarray
    ris: RisPhase
    iterations: int
    objective: float


def _ss_phase(ch, cfg) -> RisPhase:
    """Unit-modulus projection of the dominant sensing-energy direction."""
    v, _ = principal_rank1(sensing_lift(ch))
    if abs(v[-1]) > 1e-12 * np.linalg.norm(v):
        v = v[:-1] * np.conj(v[-1])
    else:
        v = v[:-1]
    return RisPhase(np.exp(1j * np.angle(v)))


def _fixed_phi_design(ch, cfg, ris, pin_tau=None, solver_tol=1e-7) -> _Design:
    """Transmit design with the phase state frozen: alternate the
    sensing-time grid search and the fractional beam rounds."""
    tau = cfg.t_total / 2.0 if pin_tau is None else float(pin_tau)
    eps = epsilon_for(cfg, tau)
    ws = solve_w(ch, ris, tau, cfg, epsilon=eps, solver_tol=solver_tol)
    w_mat = ws.w_mat
    obj = ws.objective
    n_iter = 1
    if pin_tau is None:
        for _ in range(cfg.i_max - 1):
            prev = obj
            try:
                tau_new = tau_search(ch, w_mat, ris, cfg, extra=(tau,))
            except InfeasibleDesignError:
                break
            if tau_new != tau:
                tau = tau_new
                eps = epsilon_for(cfg, tau)
                ws = solve_w(ch, ris, tau, cfg, epsilon=eps,
                             solver_tol=solver_tol)
                if ws.objective >= obj - 1e-12 * max(1.0, abs(obj)):
                    w_mat, obj = ws.w_mat, ws.objective
            n_iter += 1
            if abs(obj - prev) / max(abs(prev), 1e-12) < cfg.eps_tol:
                break
    return _Design(tau=tau, epsilon=eps, w_mat=w_mat, ris=ris,
                   iterations=n_iter, objective=obj)


def _weighted_peb_of(ch, cfg, seed, positions, w_mat, ris, tau):
    links = [geometric_ms_link(cfg, m, seed, positions)
             for m in range(cfg.m_ms)]
    vals = []
    for m, link in enumerate(links):
        try:
            vals.append(peb(fim_position(link, w_mat[:, m], ris, tau, cfg)))
        except SingularFimError:
            vals.append(math.inf)
    return weighted_peb(vals, cfg), tuple(vals)


def _optimal_ris_design(ch, cfg, seed, positions, solver_tol=1e-7,
                        n_angles=36, n_sweeps=3, n_restarts=5) -> _Design:
    """Phase search by per-element coordinate descent on the weighted
    position error bound, beams re-solved each sweep."""
    links = [geometric_ms_link(cfg, m, seed, positions)
             for m in range(cfg.m_ms)]
    angles = np.exp(2j * np.pi * np.arange(n_angles) / n_angles)

    def wpeb(w_mat, ris, tau):
        vals = []
        for m, link in enumerate(links):
            try:
                vals.append(peb(fim_position(link, w_mat[:, m], ris, tau,
                                             cfg)))
            except SingularFimError:
                return math.inf
        return weighted_peb(vals, cfg)

    best = None
    n_iter = 0
    for restart in range(n_restarts):
        ris = RisPhase.random(cfg.n_r, [seed, 0xC2, restart])
        base = _fixed_phi_design(ch, cfg, ris, solver_tol=solver_tol)
        tau, eps, w_mat = base.tau, base.epsilon, base.w_mat
        phi = np.array(ris.phi)
        for _ in range(n_sweeps):
            n_iter += 1
            ws = solve_w(ch, RisPhase(phi), tau, cfg, epsilon=eps,
                         solver_tol=solver_tol)
            w_mat = ws.w_mat
            for n in range(cfg.n_r):
                scores = []
                for a in angles:
                    phi[n] = a
                    scores.append(wpeb(w_mat, RisPhase(phi), tau))
                phi[n] = angles[int(np.argmin(scores))]
        score = wpeb(w_mat, RisPhase(phi), tau)
        if best is None or score < best[0]:
            best = (score, _Design(tau=tau, epsilon=eps, w_mat=w_mat,
                                   ris=RisPhase(np.array(phi)),
                                   iterations=n_iter,
                                   objective=base.objective))
    return best[1]


def _design_for(scheme, ch, cfg, seed, positions, pin_tau=None,
                solver_tol=1e-7) -> _Design:
    if scheme == "proposed":
        res = bcd(ch, cfg, seed, solver_tol=solver_tol, pin_tau=pin_tau)
        return _Design(tau=res.tau, epsilon=res.epsilon, w_mat=res.w_mat,
                       ris=res.ris, iterations=res.n_iter,
                       objective=res.objective)
    if scheme == "optimal_ris":
        return _optimal_ris_design(ch, cfg, seed, positions,
                                   solver_tol=solver_tol)
    if scheme == "random_ris":
        ris = RisPhase.random(cfg.n_r, [seed, 0xC1])
    elif scheme == "ss_specific_ris":
        ris = _ss_phase(ch, cfg)
    elif scheme == "no_ris":
        ris = RisPhase.ones(cfg.n_r)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return _fixed_phi_design(ch, cfg, ris, pin_tau=pin_tau,
                             solver_tol=solver_tol)


# =====================================================================
# Point execution
# =====================================================================


def _point_config(base: ScenarioConfig, kind: str, value) -> ScenarioConfig:
    fields = {f.name: getattr(base, f.name)
              for f in dataclasses.fields(ScenarioConfig)}
    if kind == "power_sweep":
        fields["p_sbs"] = dbm_to_watt(float(value))
    elif kind == "ris_sweep":
        fields["n_r"] = int(value)
    elif kind == "ms_antenna_sweep":
        fields["n_m"] = int(value)
    elif kind == "ris_location_grid":
        fields["pos_ris"] = (float(value[0]), float(value[1]))
    # tau_sweep / single_solve / convergence_cdf leave the config alone
    return make_scenario(**fields)


def _as_sweep_tuple(kind: str, value) -> tuple:
    if kind == "ris_location_grid":
        return (float(value[0]), float(value[1]))
    if kind in ("single_solve", "convergence_cdf"):
        return ()
    return (float(value),)


def run_point(spec: ExperimentSpec, base_cfg: ScenarioConfig, value,
              seed: int, solver_tol: float = 1e-7) -> ResultRecord:
    """One (grid point, seed) cell: build, design, evaluate, record."""
    t0 = time.perf_counter()
    sweep = _as_sweep_tuple(spec.kind, value)
    try:
        cfg = _point_config(base_cfg, spec.kind, value)
        positions = place_nodes(cfg, seed)
        ch = generate_channels(cfg, positions, seed)
        if spec.scheme == "no_ris":
            ch = zero_ris_links(ch)
        pin_tau = None
        if spec.kind == "tau_sweep":
            pin_tau = float(value) * cfg.t_total
        design = _design_for(spec.scheme, ch, cfg, seed, positions,
                             pin_tau=pin_tau, solver_tol=solver_tol)
        tau, eps, w_mat, ris = (design.tau, design.epsilon, design.w_mat,
                                design.ris)
        snr = sensing_snr(ch, ris, cfg)
        p_d = detection_probability(tau, eps, snr, cfg)
        p_f = false_alarm_probability(tau, eps, cfg)
        obj_min, obj_sum, _ = ms_objectives(ch, w_mat, ris, tau, p_d, p_f,
                                            cfg)
        rates = tuple(su_rate(ch, w_mat, ris, tau, p_d, p_f, cfg, k)
                      for k in range(cfg.k_su))
        report = p1_feasibility(ch, w_mat, ris, tau, cfg, eps)
        wpeb, pebs = _weighted_peb_of(ch, cfg, seed, positions, w_mat, ris,
                                      tau)
        return ResultRecord(
            scheme=spec.scheme, seed=seed, kind=spec.kind, sweep=sweep,
            weighted_min_sinr=float(obj_min), weighted_sum_sinr=float(obj_sum),
            weighted_peb=float(wpeb), peb_ms=tuple(float(v) for v in pebs),
            rate_su=tuple(float(v) for v in rates), pd=float(p_d),
            pf=float(p_f), tau=float(tau), iterations=design.iterations,
            wall_time=time.perf_counter() - t0,
            feasible=bool(report.feasible()), status="ok")
    except (InfeasibleDesignError, SingularFimError, ValueError) as exc:
        return ResultRecord(
            scheme=spec.scheme, seed=seed, kind=spec.kind, sweep=sweep,
            weighted_min_sinr=math.nan, weighted_sum_sinr=math.nan,
            weighted_peb=math.nan, peb_ms=(), rate_su=(), pd=math.nan,
            pf=math.nan, tau=math.nan, iterations=0,
            wall_time=time.perf_counter() - t0, feasible=False,
            status=f"error: {exc}")


def run(spec: ExperimentSpec, cfg: ScenarioConfig, workers: int = 1,
        solver_tol: float = 1e-7, echo=None) -> list:
    """All (grid point, seed) cells of one experiment, canonically ordered."""
    tasks = [(gi, value, seed) for gi, value in enumerate(spec.grid)
             for seed in spec.seeds]
    # tasks are already in canonical (grid point, seed) order and both
    # execution paths preserve it
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_point, spec, cfg, value, seed, solver_tol)
                    for _, value, seed in tasks]
            out = [f.result() for f in futs]
    else:
        out = []
        for _, value, seed in tasks:
            rec = run_point(spec, cfg, value, seed, solver_tol)
            if echo is not None:
                echo(f"  {spec.scheme} point={rec.sweep} seed={seed} "
                     f"obj={rec.weighted_min_sinr:.5g} status={rec.status}")
            out.append(rec)
    return out


def roc_rows(spec: ExperimentSpec, cfg: ScenarioConfig,
             solver_tol: float = 1e-7) -> list:
    """Detector operating points of the scheme's phase design.

    The design is run at the base scenario; the detection curve is then
    traced at a short common sensing window (2% of the frame, kept well
    off the saturated region so curves stay distinguishable) with the
    threshold recalibrated per false-alarm point.
    """
    rows = []
    tau = 0.02 * cfg.t_total
    for seed in spec.seeds:
        positions = place_nodes(cfg, seed)
        ch = generate_channels(cfg, positions, seed)
        if spec.scheme == "no_ris":
            ch = zero_ris_links(ch)
        design = _design_for(spec.scheme, ch, cfg, seed, positions,
                             solver_tol=solver_tol)
        snr = sensing_snr(ch, design.ris, cfg)
        for pf in spec.grid:
            eps = calibrate_threshold(tau, float(pf), cfg)
            pd = detection_probability(tau, eps, snr, cfg)
            rows.append(RocRecord(pf=float(pf), pd=pd, one_minus_pd=1.0 - pd,
                                  scheme=spec.scheme, seed=seed))
    return rows


def convergence_cdf(records) -> tuple:
    """Empirical CDF of recorded iteration counts: ((iterations, fraction), ...)."""
    counts = sorted(r.iterations for r in records)
    if not counts:
        raise ValueError("no records with iteration counts")
    n = len(counts)
    out = []
    for i, c in enumerate(counts, start=1):
        if i == n or counts[i] != c:
            out.append((c, i / n))
    return tuple(out)


# =====================================================================
# Persistence
# =====================================================================


def _manifest(spec: ExperimentSpec, cfg: ScenarioConfig) -> dict:
    return {"kind": spec.kind, "scheme": spec.scheme,
            "grid": [list(v) if isinstance(v, (tuple, list)) else v
                     for v in spec.grid],
            "seeds": list(spec.seeds), "config_hash": config_hash(cfg),
            "version": __version__,
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat()}


def _join(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def _split(text: str) -> tuple:
    return tuple(float(p) for p in text.split(";")) if text else ()


def emit(records, fmt: str, path: str, manifest: dict) -> str:
    """Write records plus the run manifest; returns the records path."""
    if not records:
        raise ValueError("no records to emit")
    if fmt == "json":
        payload = {"manifest": manifest,
                   "records": [dataclasses.asdict(r) for r in records]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, default=list)
        return path
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.scheme, r.seed, r.kind, _join(r.sweep),
                repr(r.weighted_min_sinr), repr(r.weighted_sum_sinr),
                repr(r.weighted_peb), _join(r.peb_ms), _join(r.rate_su),
                repr(r.pd), repr(r.pf), repr(r.tau), r.iterations,
                repr(r.wall_time), r.feasible, r.status])
    with open(path + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def parse_records(path: str, fmt: str = "csv") -> list:
    """Inverse of emit for ResultRecord files."""
    if fmt == "json":
        with open(path) as fh:
            payload = json.load(fh)
        out = []
        for row in payload["records"]:
            row = dict(row)
            for f in ("sweep", "peb_ms", "rate_su"):
                row[f] = tuple(row[f])
            out.append(ResultRecord(**row))
        return out
    import csv as _csv
    out = []
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            out.append(ResultRecord(
                scheme=row["scheme"], seed=int(row["seed"]),
                kind=row["kind"], sweep=_split(row["sweep"]),
                weighted_min_sinr=float(row["weighted_min_sinr"]),
                weighted_sum_sinr=float(row["weighted_sum_sinr"]),
                weighted_peb=float(row["weighted_peb"]),
                peb_ms=_split(row["peb_ms"]), rate_su=_split(row["rate_su"]),
                pd=float(row["pd"]), pf=float(row["pf"]),
                tau=float(row["tau"]), iterations=int(row["iterations"]),
                wall_time=float(row["wall_time"]),
                feasible=row["feasible"] == "True", status=row["status"]))
    return out


def emit_roc(rows, path: str, manifest: dict) -> str:
    with open(path, "w") as fh:
        fh.write(ROC_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.pf!r},{r.pd!r},{r.one_minus_pd!r},{r.scheme},"
                     f"{r.seed}\n")
    with open(path + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def ris_location_grid(step: float = 10.0) -> tuple:
    """Candidate RIS positions: x in [-20, 90], y in [-50, 60]."""
    xs = np.arange(-20.0, 90.0 + 0.5 * step, step)
    ys = np.arange(-50.0, 60.0 + 0.5 * step, step)
    return tuple((float(x), float(y)) for x in xs for y in ys)


# =====================================================================
# Command line
# =====================================================================


def _load_cfg(path):
    if path is None:
        return default_scenario()
    with open(path) as fh:
        return load_scenario(fh.read())


def _seed_list(seed, n_seeds):
    return tuple(seed + i for i in range(n_seeds))


def _finish(records, spec, cfg, out, fmt):
    if out:
        emit(records, fmt, out, _manifest(spec, cfg))
        click.echo(f"wrote {len(records)} records to {out}")
    bad = [r for r in records if r.status != "ok"]
    for r in bad:
        click.echo(f"point {r.sweep} seed {r.seed}: {r.status}", err=True)
    sys.exit(2 if bad else 0)


def _common(f):
    for opt in reversed([
        click.option("--scenario", type=click.Path(exists=True), default=None,
                     help="scenario JSON; default: built-in"),
        click.option("--seed", type=int, default=0, show_default=True,
                     help="base seed"),
        click.option("--seeds", "n_seeds", type=int, default=1,
                     show_default=True, help="number of consecutive seeds"),
        click.option("--scheme", type=click.Choice(SCHEMES),
                     default="proposed", show_default=True),
        click.option("--out", type=click.Path(), default=None,
                     help="output file"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                     default="csv", show_default=True),
        click.option("--workers", type=int, default=1, show_default=True),
    ]):
        f = opt(f)
    return f


@click.group()
@click.version_option(__version__)
def main():
    """Cognitive RIS-ISAC experiment runner."""


@main.command()
@_common
@click.option("--trace", type=click.Path(), default=None,
              help="write the block-round trace CSV here")
def solve(scenario, seed, n_seeds, scheme, out, fmt, workers, trace):
    """Run one design per seed at the base scenario."""
    cfg = _load_cfg(scenario)
    spec = ExperimentSpec(kind="single_solve", scheme=scheme, grid=(None,),
                          seeds=_seed_list(seed, n_seeds), out=out, format=fmt)
    if trace and scheme == "proposed":
        from .bcd import write_trace
        positions = place_nodes(cfg, seed)
        ch = generate_channels(cfg, positions, seed)
        res = bcd(ch, cfg, seed)
        write_trace(res.trace, trace)
        click.echo(f"wrote trace to {trace}")
    records = run(spec, cfg, workers=workers, echo=click.echo)
    for r in records:
        click.echo(f"seed {r.seed}: obj={r.weighted_min_sinr:.6g} "
                   f"wpeb={r.weighted_peb:.6g} tau={r.tau:.5g} "
                   f"iters={r.iterations} feasible={r.feasible}")
    _finish(records, spec, cfg, out, fmt)


@main.command()
@_common
@click.option("--kind", "family",
              type=click.Choice(["power", "ris", "ms_antenna", "tau"]),
              required=True)
@click.option("--values", default=None,
              help="comma-separated grid override")
def sweep(scenario, seed, n_seeds, scheme, out, fmt, workers, family, values):
    """Sweep one scenario axis over seeded draws."""
    cfg = _load_cfg(scenario)
    kind = f"{family}_sweep"
    grid = DEFAULT_GRIDS[kind]
    if values:
        cast = int if kind in ("ris_sweep", "ms_antenna_sweep") else float
        grid = tuple(cast(v) for v in values.split(","))
    spec = ExperimentSpec(kind=kind, scheme=scheme, grid=grid,
                          seeds=_seed_list(seed, n_seeds), out=out, format=fmt)
    records = run(spec, cfg, workers=workers, echo=click.echo)
    _finish(records, spec, cfg, out, fmt)


@main.command()
@_common
@click.option("--pf-grid", default=None, help="comma-separated P_f points")
def roc(scenario, seed, n_seeds, scheme, out, fmt, workers, pf_grid):
    """Detection-versus-false-alarm curve of the scheme's design."""
    cfg = _load_cfg(scenario)
    grid = DEFAULT_GRIDS["roc"]
    if pf_grid:
        grid = tuple(float(v) for v in pf_grid.split(","))
    spec = ExperimentSpec(kind="roc", scheme=scheme, grid=grid,
                          seeds=_seed_list(seed, n_seeds), out=out, format=fmt)
    rows = roc_rows(spec, cfg)
    if out:
        emit_roc(rows, out, _manifest(spec, cfg))
        click.echo(f"wrote {len(rows)} points to {out}")
    else:
        click.echo(ROC_HEADER)
        for r in rows:
            click.echo(f"{r.pf:.4g},{r.pd:.6g},{r.one_minus_pd:.6g},"
                       f"{r.scheme},{r.seed}")
    sys.exit(0)


@main.command()
@_common
@click.option("--cells", default=None,
              help="comma-separated x:y cells, default full placement grid")
@click.option("--step", type=float, default=10.0, show_default=True)
def grid(scenario, seed, n_seeds, scheme, out, fmt, workers, cells, step):
    """Weighted position error bound over candidate RIS placements."""
    cfg = _load_cfg(scenario)
    if cells:
        points = tuple(tuple(float(c) for c in cell.split(":"))
                       for cell in cells.split(","))
    else:
        points = ris_location_grid(step)
    spec = ExperimentSpec(kind="ris_location_grid", scheme=scheme,
                          grid=points, seeds=_seed_list(seed, n_seeds),
                          out=out, format=fmt)
    records = run(spec, cfg, workers=workers, echo=click.echo)
    _finish(records, spec, cfg, out, fmt)


@main.command()
@_common
def cdf(scenario, seed, n_seeds, scheme, out, fmt, workers):
    """Empirical CDF of block-round iteration counts over seeds."""
    cfg = _load_cfg(scenario)
    spec = ExperimentSpec(kind="convergence_cdf", scheme=scheme, grid=(None,),
                          seeds=_seed_list(seed, n_seeds), out=out, format=fmt)
    records = run(spec, cfg, workers=workers, echo=click.echo)
    good = [r for r in records if r.status == "ok"]
    if not good:
        click.echo("every run failed; no CDF to report", err=True)
        sys.exit(2)
    curve = convergence_cdf(good)
    lines = ["iterations,fraction"] + [f"{c},{frac!r}" for c, frac in curve]
    if out:
        with open(out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(out + ".manifest.json", "w") as fh:
            json.dump(_manifest(spec, cfg), fh, indent=1)
        click.echo(f"wrote CDF to {out}")
    else:
        for line in lines:
            click.echo(line)
    sys.exit(2 if any(r.status != "ok" for r in records) else 0)


if __name__ == "__main__":
    main()
