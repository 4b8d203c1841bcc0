"""Command-line front end: config ingestion, pipeline runs, reports.

One JSON document describes a model (arrival matrices, batch thresholds,
per-size service laws, optional tolerance overrides, optional output
selection).  The ``solve`` command runs the analytic pipeline, optionally
the simulator and the capped-chain cross-check, prints summary tables,
and writes a machine-readable report.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import arrival, departure, epochs, measures, oracles, roots, services
from .errors import ConfigError, SolverError, Unstable

_MODULE = "cli"

log = logging.getLogger("dmapqueue")

_EPOCH_NAMES = ("departure", "arbitrary", "prearrival")

_DEFAULT_ROWS = (0, 1, 2, 3, 4, 5, 15, 30, 50, 70)

# exit codes grouped by what the caller can do about the failure
_EXIT_CODES = {
    "config": 2,
    "non-stochastic": 3,
    "negative-entry": 3,
    "reducible": 3,
    "degenerate-process": 3,
    "singular-phase-matrix": 3,
    "zero-arrival-rate": 3,
    "unstable": 4,
    "root-count-mismatch": 5,
    "cluster-detected": 5,
    "degree-overflow": 5,
    "truncation-failure": 6,
    "tail-truncation-failure": 6,
    "negative-probability": 6,
    "ill-conditioned": 6,
    "singular-solve": 6,
    "cap-too-small": 7,
    "error": 1,
}


@dataclass(frozen=True)
class SolverConfig:
    """Validated run description."""

    dmap: arrival.DMapProcess
    a: int
    b: int
    services_by_r: dict
    eps_tail: float
    eps_root: float
    clamp: float
    epochs: tuple
    rows: tuple
    fmt: str


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"missing {key!r} in {where}", _MODULE)
    return doc[key]


def _service_from_spec(spec, where: str):
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be an object", _MODULE)
    kw = dict(spec)
    kind = kw.pop("kind", None)
    if kind is None:
        raise ConfigError(f"{where} needs a 'kind' tag", _MODULE)
    try:
        return services.make_service(kind, **kw)
    except SolverError:
        raise
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}", _MODULE) from exc


def config_from_dict(doc: dict) -> SolverConfig:
    """Build a validated config from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object", _MODULE)

    arr = _require(doc, "arrival", "config")
    C = np.array(_require(arr, "C", "arrival"), dtype=float)
    D = np.array(_require(arr, "D", "arrival"), dtype=float)
    if C.ndim != 2 or C.shape != D.shape or C.shape[0] != C.shape[1]:
        raise ConfigError("arrival C and D must be equal square matrices", _MODULE)
    dmap = arrival.validate(C, D)

    th = _require(doc, "thresholds", "config")
    a = int(_require(th, "a", "thresholds"))
    b = int(_require(th, "b", "thresholds"))
    if not 1 <= a <= b:
        raise ConfigError(f"need 1 <= a <= b, got a={a} b={b}", _MODULE)

    svc_doc = _require(doc, "services", "config")
    if not isinstance(svc_doc, dict):
        raise ConfigError("services must be an object", _MODULE)
    services_by_r = {}
    if "kind" in svc_doc or set(svc_doc) == {"all"}:
        spec = svc_doc if "kind" in svc_doc else svc_doc["all"]
        shared = _service_from_spec(spec, "services")
        for r in range(a, b + 1):
            services_by_r[r] = shared
    else:
        for r in range(a, b + 1):
            key = str(r)
            if key not in svc_doc:
                raise ConfigError(
                    f"services must cover every batch size {a}..{b}; "
                    f"missing {key!r}",
                    _MODULE,
                )
            services_by_r[r] = _service_from_spec(svc_doc[key], f"services[{key}]")
        extra = set(svc_doc) - {str(r) for r in range(a, b + 1)}
        if extra:
            raise ConfigError(
                f"services contains keys outside {a}..{b}: {sorted(extra)}",
                _MODULE,
            )

    tol = doc.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("tolerances must be an object", _MODULE)
    eps_tail = float(tol.get("eps_tail", 1e-10))
    eps_root = float(tol.get("eps_root", 1e-9))
    clamp = float(tol.get("clamp", 1e-8))

    out = doc.get("outputs", {})
    if not isinstance(out, dict):
        raise ConfigError("outputs must be an object", _MODULE)
    epoch_sel = out.get("epochs", "all")
    if epoch_sel == "all":
        epoch_names = _EPOCH_NAMES
    else:
        if isinstance(epoch_sel, str):
            epoch_sel = [epoch_sel]
        bad = [e for e in epoch_sel if e not in _EPOCH_NAMES]
        if bad:
            raise ConfigError(f"unknown epochs {bad}", _MODULE)
        epoch_names = tuple(epoch_sel)
    rows = tuple(int(n) for n in out.get("rows", _DEFAULT_ROWS))
    if any(n < 0 for n in rows):
        raise ConfigError("output rows must be nonnegative", _MODULE)
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown format {fmt!r}", _MODULE)

    return SolverConfig(
        dmap=dmap,
        a=a,
        b=b,
        services_by_r=services_by_r,
        eps_tail=eps_tail,
        eps_root=eps_root,
        clamp=clamp,
        epochs=epoch_names,
        rows=rows,
        fmt=fmt,
    )


def load_config(path: str) -> SolverConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", _MODULE) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", _MODULE) from exc
    return config_from_dict(doc)


@dataclass(frozen=True)
class AnalyticSolution:
    """Everything the analytic pipeline produces for one model."""

    phase_weights: np.ndarray
    arrival_rate: float
    load: float
    dep: departure.DepartureDistribution
    arb: epochs.EpochDistribution
    pre: epochs.EpochDistribution
    perf: measures.PerformanceMeasures
    root_set: roots.RootSet
    boundary: departure.BoundaryUnknowns


def run_analytic(cfg: SolverConfig) -> AnalyticSolution:
    """Full pipeline: stability, transforms, roots, laws, measures."""
    pi_bar, rate = arrival.stationary(cfg.dmap)
    rho = services.stability_ratio(cfg.dmap, cfg.services_by_r[cfg.b], cfg.b)
    if rho >= 1.0:
        raise Unstable(
            f"offered load {rho:.6f} is at or above 1; no steady state",
            _MODULE,
        )
    gfs = {
        r: services.build_rational_gf(cfg.dmap, cfg.services_by_r[r], r)
        for r in range(cfg.a, cfg.b + 1)
    }
    cs = roots.build_characteristic(gfs[cfg.b], cfg.b)
    rs = roots.find_roots(cs, boundary_tol=cfg.eps_root)
    bu = departure.solve_boundary_unknowns(
        cs, rs, gfs, cfg.dmap, cfg.a, neg_tol=cfg.clamp
    )
    dep = departure.extract_departure_distribution(
        bu,
        cs,
        rs,
        cfg.dmap,
        cfg.services_by_r,
        gfs,
        cfg.a,
        eps=cfg.eps_tail,
        neg_tol=cfg.clamp,
    )
    arb = epochs.arbitrary_epoch(
        dep, cfg.dmap, cfg.services_by_r, cfg.a, neg_tol=cfg.clamp
    )
    pre = epochs.pre_arrival_epoch(arb, cfg.dmap)
    perf = measures.scalar_measures(arb, cfg.dmap, cfg.services_by_r, dep=dep)
    return AnalyticSolution(
        phase_weights=pi_bar,
        arrival_rate=rate,
        load=rho,
        dep=dep,
        arb=arb,
        pre=pre,
        perf=perf,
        root_set=rs,
        boundary=bu,
    )


# ---------------------------------------------------------------------------
# report assembly


def _listify(x) -> list:
    return np.asarray(x).tolist()


def _epoch_section(dist: epochs.EpochDistribution) -> dict:
    return {
        "idle": _listify(dist.p_idle),
        "busy": _listify(dist.pi_busy),
        "batch_low": dist.batch_low,
        "idle_mass": float(dist.idle_mass()),
        "n_trunc": dist.n_trunc,
    }


def build_report(
    cfg: SolverConfig,
    sol: AnalyticSolution | None,
    sim: oracles.SimulationResult | None = None,
    chain: oracles.TruncatedChainResult | None = None,
    unstable_message: str | None = None,
) -> dict:
    report: dict = {
        "model": {
            "phases": cfg.dmap.m,
            "batch_low": cfg.a,
            "batch_high": cfg.b,
        }
    }
    if unstable_message is not None:
        report["unstable"] = unstable_message

    if sol is not None:
        report["model"]["arrival_rate"] = sol.arrival_rate
        report["model"]["load"] = sol.load
        report["model"]["phase_weights"] = _listify(sol.phase_weights)
        if "departure" in cfg.epochs:
            report["departure"] = {
                "joint": _listify(sol.dep.pi),
                "queue_marginal": _listify(sol.dep.phi_marginal),
                "batch_low": cfg.a,
                "n_trunc": sol.dep.n_trunc,
            }
        if "arbitrary" in cfg.epochs:
            report["arbitrary"] = _epoch_section(sol.arb)
        if "prearrival" in cfg.epochs:
            report["prearrival"] = _epoch_section(sol.pre)
        p = sol.perf
        report["measures"] = {
            "mean_system": p.mean_system,
            "mean_queue": p.mean_queue,
            "mean_in_service": p.mean_in_service,
            "mean_sojourn": p.mean_sojourn,
            "mean_wait": p.mean_wait,
            "p_idle": p.p_idle,
            "p_busy": p.p_busy,
            "load": p.load,
            "arrival_rate": p.arrival_rate,
        }
        report["diagnostics"] = {
            "roots_inside": len(sol.root_set.inside),
            "roots_outside": len(sol.root_set.outside),
            "max_root_residual": float(
                max(
                    sol.root_set.residuals_inside.max(initial=0.0),
                    sol.root_set.residuals_outside.max(initial=0.0),
                )
            ),
            "boundary_condition": sol.boundary.condition,
            "boundary_residual": sol.boundary.max_residual,
            "boundary_clamp": sol.boundary.max_clamp,
            "departure_tail_mass": sol.dep.tail_mass,
            "departure_clamp": sol.dep.max_clamp,
            "departure_mass_before_renorm": sol.dep.mass_before_renorm,
            "series_deviation": sol.dep.series_deviation,
            "arbitrary_clamp": sol.arb.max_clamp,
            "arbitrary_mass_before_renorm": sol.arb.mass_before_renorm,
        }

    if sim is not None:
        top = int(np.max(np.nonzero(sim.counts_arbitrary.sum(axis=(1, 2)))[0])) if (
            sim.counts_arbitrary.sum() > 0
        ) else 0
        idle_cols = sim.arb[:, 0, :]
        report["simulation"] = {
            "slots": sim.slot_count,
            "warmup_slots": sim.warmup_slots,
            "seed": sim.seed,
            "idle_fraction": float(idle_cols.sum()),
            "idle_fraction_se": float(np.sqrt((sim.arb_se[:, 0, :] ** 2).sum())),
            "arrivals": sim.arrival_count,
            "departures": sim.departure_count,
            "batch_queue_means": _listify(sim.batch_queue_means),
            "arbitrary": _listify(sim.arb[: top + 1]),
            "prearrival": _listify(sim.pre[: top + 1]),
            "departure": _listify(sim.dep[: top + 1]),
        }

    if chain is not None:
        report["truncated_chain"] = {
            "states": chain.state_count,
            "residual": chain.residual,
            "boundary_mass": chain.boundary_mass,
            "idle_mass": float(chain.p_idle.sum()),
            "idle": _listify(chain.p_idle),
            "busy": _listify(chain.pi_busy),
            "departure": _listify(chain.dep_pi),
        }
    return report


def write_report(report: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    return path


def _write_cells_csv(path, rows_iter):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "server_content", "phase", "probability"])
        w.writerows(rows_iter)


def write_csv_tables(cfg: SolverConfig, sol: AnalyticSolution, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def dep_rows():
        for n in range(sol.dep.n_trunc + 1):
            for j in range(cfg.b - cfg.a + 1):
                for i in range(cfg.dmap.m):
                    yield n, cfg.a + j, i, repr(float(sol.dep.pi[n, j, i]))

    def epoch_rows(dist):
        for n in range(dist.p_idle.shape[0]):
            for i in range(cfg.dmap.m):
                yield n, 0, i, repr(float(dist.p_idle[n, i]))
        for n in range(dist.n_trunc + 1):
            for j in range(cfg.b - cfg.a + 1):
                for i in range(cfg.dmap.m):
                    yield n, cfg.a + j, i, repr(float(dist.pi_busy[n, j, i]))

    if "departure" in cfg.epochs:
        p = os.path.join(out_dir, "departure.csv")
        _write_cells_csv(p, dep_rows())
        written.append(p)
    if "arbitrary" in cfg.epochs:
        p = os.path.join(out_dir, "arbitrary.csv")
        _write_cells_csv(p, epoch_rows(sol.arb))
        written.append(p)
    if "prearrival" in cfg.epochs:
        p = os.path.join(out_dir, "prearrival.csv")
        _write_cells_csv(p, epoch_rows(sol.pre))
        written.append(p)

    p = os.path.join(out_dir, "measures.csv")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["measure", "value"])
        perf = sol.perf
        for name in (
            "mean_system",
            "mean_queue",
            "mean_in_service",
            "mean_sojourn",
            "mean_wait",
            "p_idle",
            "p_busy",
            "load",
            "arrival_rate",
        ):
            w.writerow([name, repr(float(getattr(perf, name)))])
    written.append(p)
    return written


# ---------------------------------------------------------------------------
# stdout tables


def _print_epoch_table(title, cfg, idle, busy, rows, out):
    R = cfg.b - cfg.a + 1
    has_idle = idle is not None
    header = ["n"]
    if has_idle:
        header.append("idle")
    header += [f"r={cfg.a + j}" for j in range(R)]
    header.append("total")
    print(title, file=out)
    print("  " + "  ".join(f"{h:>10}" for h in header), file=out)
    n_max = busy.shape[0] - 1
    for n in rows:
        if n > n_max and (not has_idle or n >= idle.shape[0]):
            continue
        cells = []
        total = 0.0
        if has_idle:
            v = idle[n].sum() if n < idle.shape[0] else 0.0
            cells.append(v)
            total += v
        for j in range(R):
            v = busy[n, j].sum() if n <= n_max else 0.0
            cells.append(v)
            total += v
        line = [f"{n:>10}"] + [f"{v:10.6f}" for v in cells] + [f"{total:10.6f}"]
        print("  " + "  ".join(line), file=out)
    print("", file=out)


def print_summary(cfg: SolverConfig, sol: AnalyticSolution, out=None) -> None:
    out = out or sys.stdout
    print(
        f"model: {cfg.dmap.m} phases, batches {cfg.a}..{cfg.b}, "
        f"arrival rate {sol.arrival_rate:.6f}, load {sol.load:.6f}",
        file=out,
    )
    print("", file=out)
    if "departure" in cfg.epochs:
        _print_epoch_table(
            "queue and served batch at departures",
            cfg,
            None,
            sol.dep.pi,
            cfg.rows,
            out,
        )
    if "arbitrary" in cfg.epochs:
        _print_epoch_table(
            "queue and served batch at slot boundaries",
            cfg,
            sol.arb.p_idle,
            sol.arb.pi_busy,
            cfg.rows,
            out,
        )
    if "prearrival" in cfg.epochs:
        _print_epoch_table(
            "queue and served batch as seen by arrivals",
            cfg,
            sol.pre.p_idle,
            sol.pre.pi_busy,
            cfg.rows,
            out,
        )
    perf = sol.perf
    print("measures", file=out)
    for name, val in (
        ("mean system length", perf.mean_system),
        ("mean queue length", perf.mean_queue),
        ("mean batch in service", perf.mean_in_service),
        ("mean sojourn time", perf.mean_sojourn),
        ("mean waiting time", perf.mean_wait),
        ("idle probability", perf.p_idle),
        ("busy probability", perf.p_busy),
        ("offered load", perf.load),
    ):
        print(f"  {name:<24}{val:12.6f}", file=out)
    print("", file=out)


def print_diagnostics(sol: AnalyticSolution, out=None) -> None:
    out = out or sys.stdout
    rs = sol.root_set
    print("diagnostics", file=out)
    rows = (
        ("unit-disk roots", f"{len(rs.inside)}"),
        ("exterior roots", f"{len(rs.outside)}"),
        ("boundary condition", f"{sol.boundary.condition:.3e}"),
        ("boundary residual", f"{sol.boundary.max_residual:.3e}"),
        ("clamped mass", f"{max(sol.dep.max_clamp, sol.arb.max_clamp):.3e}"),
        ("tail mass", f"{sol.dep.tail_mass:.3e}"),
        ("series deviation", f"{sol.dep.series_deviation:.3e}"),
    )
    for name, val in rows:
        print(f"  {name:<24}{val:>12}", file=out)
    print("", file=out)


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmapqueue",
        description=(
            "Analytic solver for a discrete-time batch-service queue with "
            "Markovian arrivals and batch-size-dependent service times"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run the pipeline on a JSON config")
    solve.add_argument("config", help="path to the model description")
    solve.add_argument(
        "--epoch",
        choices=_EPOCH_NAMES + ("all",),
        default=None,
        help="which census tables to produce (default: config or all)",
    )
    solve.add_argument(
        "--simulate",
        action="store_true",
        help="also run the slot-level simulator",
    )
    solve.add_argument("--slots", type=int, default=1_000_000)
    solve.add_argument("--seed", type=int, default=1)
    solve.add_argument(
        "--oracle-dtmc",
        action="store_true",
        help="also solve the capped chain exactly",
    )
    solve.add_argument("--ncap", type=int, default=400)
    solve.add_argument("--ucap", type=int, default=64)
    solve.add_argument("--out", default=".", help="directory for report files")
    solve.add_argument("--format", choices=("json", "csv"), default=None)
    return parser


def _error_exit(exc: SolverError) -> int:
    payload = {
        "error": {
            "category": exc.category,
            "module": exc.module,
            "message": str(exc),
        }
    }
    print(json.dumps(payload), file=sys.stderr)
    return _EXIT_CODES.get(exc.category, 1)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DMAPQUEUE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.epoch is not None:
            names = _EPOCH_NAMES if args.epoch == "all" else (args.epoch,)
            cfg = dataclasses.replace(cfg, epochs=names)
        if args.format is not None:
            cfg = dataclasses.replace(cfg, fmt=args.format)
    except SolverError as exc:
        return _error_exit(exc)

    sol = None
    unstable_message = None
    try:
        sol = run_analytic(cfg)
    except Unstable as exc:
        if not args.simulate:
            return _error_exit(exc)
        unstable_message = str(exc)
        log.warning("analytic path skipped: %s", exc)
    except SolverError as exc:
        return _error_exit(exc)

    sim = None
    chain = None
    try:
        if args.simulate:
            sim = oracles.simulate(
                cfg.dmap,
                cfg.services_by_r,
                cfg.a,
                cfg.b,
                args.slots,
                args.seed,
            )
        if args.oracle_dtmc:
            chain = oracles.solve_truncated_chain(
                cfg.dmap,
                cfg.services_by_r,
                cfg.a,
                cfg.b,
                args.ncap,
                args.ucap,
            )
    except SolverError as exc:
        return _error_exit(exc)

    report = build_report(cfg, sol, sim, chain, unstable_message)
    path = write_report(report, args.out)
    written = [path]
    if sol is not None and cfg.fmt == "csv":
        written += write_csv_tables(cfg, sol, args.out)

    if sol is not None:
        print_summary(cfg, sol)
        print_diagnostics(sol)
    else:
        print(f"analytic path skipped: {unstable_message}")
        if sim is not None:
            means = ", ".join(f"{v:.1f}" for v in sim.batch_queue_means[::8])
            print(f"simulated queue means per segment: {means}")
    if sim is not None and sol is not None:
        idle = report["simulation"]["idle_fraction"]
        se = report["simulation"]["idle_fraction_se"]
        print(
            f"simulation: {args.slots} slots, seed {args.seed}, "
            f"idle fraction {idle:.6f} (se {se:.2e})"
        )
    if chain is not None:
        print(
            f"capped chain: {chain.state_count} states, "
            f"idle mass {chain.p_idle.sum():.6f}, "
            f"residual {chain.residual:.2e}"
        )
    for p in written:
        print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
