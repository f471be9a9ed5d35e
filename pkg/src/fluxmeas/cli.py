"""Command line scenario runner.

    fluxmeas spectrum [CONFIG] [--preset P] [--set section.key=value ...] [-o OUT]
    fluxmeas scan [CONFIG] --preset fig1|fig2|fig3|fig3-insert|fig4
    fluxmeas correlate [CONFIG] --preset fig5a|fig5b
    fluxmeas oracle-check [CONFIG]

CSV goes to ``output.path`` (``-`` for stdout) with ``#`` header comments; a
JSON manifest is written next to it (``<path>.manifest.json``) or to stderr
when the CSV goes to stdout.

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 accuracy-check failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import platform
import sys
import warnings
from importlib import metadata

import numpy as np
import scipy

from .config import PRESETS, RunConfig, load_config
from .errors import (ConfigError, ContractViolation, DegenerateError, FluxMeasError,
                     OrthogonalTrialError, SolverFailure, StepSizeError)
from .measurement import SequenceSpec, SignMeasure, gaussian_packet
from .oracle import oracle_check
from .spectral import QuarticDoubleWell, build_basis, characteristic_time
from .statistics import (asymptotic_uncertainty, conditioned_landscape, correlation_probability,
                         default_packet_sigma, initial_state, landscape_sum_curve,
                         lg_correlator, prepared_state, ranked_minima, scan_barrier,
                         scan_quiescent)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCURACY = 0, 1, 2, 3

CONVENTIONS = {
    "units": "dimensionless code units, hbar = 1",
    "hamiltonian": "H = -kappa d^2/dphi^2 + V(phi)",
    "collapse": "w = exp(-(phi - Phi)^2 / (2 delta_phi^2))",
    "outcome_density": "p(Phi) ∝ ∫ |psi|^2 exp(-(phi - Phi)^2 / delta_phi^2) dphi",
    "effective_uncertainty": "sqrt(2 ∫ (Phi - mode)^2 p(Phi) dPhi)",
    "characteristic_time": "T_ij = 2 pi / |E_j - E_i| (1-based levels)",
}


def fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), ".12g")


class Table:
    """CSV body with ``#`` comment header."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.header: list = []
        self.rows: list = []

    def meta(self, key, value):
        self.header.append((key, value))

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row width does not match the columns")
        self.rows.append(row)

    def render(self) -> str:
        out = io.StringIO()
        for key, value in self.header:
            out.write(f"# {key}: {fmt(value) if not isinstance(value, str) else value}\n")
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join(fmt(v) for v in row) + "\n")
        return out.getvalue()


def _basis(cfg: RunConfig, spec=None):
    spec = spec or cfg.potential()
    b = cfg["basis"]
    try:
        return build_basis(spec, n_states=b["n_states"], n_points=b["n_points"],
                           solver=b["solver"], span=b["span"] or None)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc


def _unit_time(basis, unit: str) -> float:
    if unit == "T12":
        return characteristic_time(basis, 1, 2)
    if unit == "T26":
        if basis.n_states < 6:
            raise ConfigError("dt_unit T26 needs at least 6 basis states")
        return characteristic_time(basis, 2, 6)
    return 1.0


def _potential_meta(table: Table, cfg: RunConfig):
    p = cfg["potential"]
    table.meta("potential", p["kind"])
    keys = ("half_width", "barrier_strength") if p["kind"] == "delta" else ("mu", "lam")
    for k in keys + ("kappa",):
        table.meta(k, p[k])


def _times_meta(table: Table, basis, manifest: dict):
    for i, j in ((1, 2), (2, 6), (1, 5)):
        if basis.n_states >= j:
            t = characteristic_time(basis, i, j)
            table.meta(f"T_{i}{j}", t)
            manifest.setdefault("characteristic_times", {})[f"T_{i}{j}"] = t


# --------------------------------------------------------------------------- commands

def cmd_spectrum(cfg: RunConfig, manifest: dict) -> tuple[Table, int]:
    spec = cfg.potential()
    basis = _basis(cfg, spec)
    t = Table(["index", "energy", "parity", "sub_barrier"])
    _potential_meta(t, cfg)
    t.meta("method", basis.method)
    t.meta("n_points", basis.grid.n_points)
    t.meta("grid", f"[{fmt(basis.grid.phi_min)}, {fmt(basis.grid.phi_max)}]")
    t.meta("orthonormality_error", basis.orthonormality_error())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        leak = gaussian_packet(basis, spec.well_center, default_packet_sigma(spec), warn=False).leakage
    t.meta("leakage", leak)
    manifest["leakage"] = leak
    _times_meta(t, basis, manifest)
    quartic = isinstance(spec, QuarticDoubleWell)
    if quartic:
        t.meta("sub_barrier_count", basis.sub_barrier_count())
    else:
        t.meta("sub_barrier", "defined for the quartic well only; 0 for the box")
    for k, (e, par) in enumerate(zip(basis.energies, basis.parities()), start=1):
        t.add(k, e, int(par), bool(quartic and e < 0))
    for d in basis.diagnostics:
        manifest.setdefault("diagnostics", []).append(d)
    return t, EXIT_OK


def cmd_scan(cfg: RunConfig, manifest: dict) -> tuple[Table, int]:
    seq = cfg["sequence"]
    dphi = cfg["measurement"]["delta_phi"]
    n_max = seq["n_events"]
    if seq["v0_values"]:
        pot = cfg["potential"]
        if pot["kind"] != "delta":
            raise ConfigError("barrier scans need potential.kind = 'delta'")
        rule = {"T12": (1, 2), "T26": (2, 6)}.get(seq["dt_unit"])
        if rule is None:
            raise ConfigError("barrier scans need dt_unit T12 or T26")
        phi0 = cfg["measurement"]["phi0"]
        curve = scan_barrier(pot["half_width"], dphi, seq["v0_values"], kappa=pot["kappa"],
                             n_max=n_max, phi0=None if isinstance(phi0, str) else phi0,
                             initial=seq["initial"], n_states=cfg["basis"]["n_states"],
                             n_points=cfg["basis"]["n_points"], dt_rule=rule)
        t = Table(["parameter", "delta_phi_eff", "leakage", "n_converged"])
        _potential_meta(t, cfg)
        t.meta("parameter", f"V0 (quiescent time = {seq['dt_unit']} of each basis)")
        t.meta("delta_phi", dphi)
        t.meta("N", n_max)
        t.meta("initial", seq["initial"])
        for row in zip(curve.values, curve.delta_phi_eff, curve.leakage, curve.n_converged):
            t.add(*row)
        manifest["leakage"] = float(np.max(curve.leakage))
        return t, EXIT_OK

    spec = cfg.potential()
    basis = _basis(cfg, spec)
    phi0 = cfg.phi0(spec)
    unit = _unit_time(basis, seq["dt_unit"])
    multiples = cfg.dt_multiples()
    if not multiples or min(multiples) <= 0:
        raise ConfigError("quiescent times must be positive")
    init = initial_state(basis, seq["initial"], center=phi0)

    if seq["series"]:
        t = Table(["parameter", "dt", "delta_phi_eff", "leakage", "n_converged"])
    else:
        t = Table(["parameter", "delta_phi_eff", "leakage", "n_converged"])
    _potential_meta(t, cfg)
    _times_meta(t, basis, manifest)
    t.meta("delta_phi", dphi)
    t.meta("phi0", phi0)
    t.meta("N", n_max)
    t.meta("initial", seq["initial"])
    leak = init.leakage
    if seq["series"]:
        t.meta("parameter", "n (number of preparing collapses)")
        t.meta("dt", f"quiescent time in units of {seq['dt_unit']}")
        for m in multiples:
            res = asymptotic_uncertainty(basis, phi0, dphi, m * unit, n_max, initial=init)
            leak = max(leak, res.leakage)
            for n, v in enumerate(res.series, start=1):
                t.add(n, m, v, res.leakage, res.n_converged)
    else:
        t.meta("parameter", f"quiescent time in units of {seq['dt_unit']}")
        curve = scan_quiescent(basis, phi0, dphi, n_max, [m * unit for m in multiples],
                               initial=init, workers=seq["workers"])
        for row in zip(multiples, curve.delta_phi_eff, curve.leakage, curve.n_converged):
            t.add(*row)
        leak = max(leak, float(np.max(curve.leakage)))
        locs, prom = ranked_minima(multiples, curve.delta_phi_eff)
        if locs.size:
            t.meta("deepest_minima", " ".join(fmt(v) for v in locs[:4]))
    manifest["leakage"] = leak
    return t, EXIT_OK


def cmd_correlate(cfg: RunConfig, manifest: dict) -> tuple[Table, int]:
    seq = cfg["sequence"]
    meas = cfg["measurement"]
    spec = cfg.potential()
    basis = _basis(cfg, spec)
    dphi = meas["delta_phi"]
    phi0 = cfg.phi0(spec)
    t12 = characteristic_time(basis, 1, 2)
    unit = _unit_time(basis, seq["dt_unit"])
    init = initial_state(basis, seq["initial"], center=phi0)
    state0 = (prepared_state(basis, phi0, dphi, t12, seq["prep_events"], initial=init)
              if seq["prep_events"] > 0 else init)
    manifest["leakage"] = state0.leakage

    if seq["landscape"]:
        steps = [seq["landscape_step"] * k for k in range(1, seq["landscape_points"] + 1)]
        t_a = t12 if seq["prep_events"] > 0 else 0.0
        land = conditioned_landscape(state0, seq["landscape"], t_a,
                                     [s * t12 for s in steps], [s * t12 for s in steps], dphi,
                                     threshold=meas["threshold"], n_nodes=meas["quadrature_nodes"])
        t = Table(["dt_ab", "dt_bc", "delta_phi_eff", "joint_probability", "pattern_sum",
                   "impossible"])
        _potential_meta(t, cfg)
        _times_meta(t, basis, manifest)
        t.meta("pattern", land.pattern)
        t.meta("delta_phi", dphi)
        t.meta("preparation", f"{seq['prep_events']} collapses at {fmt(phi0)} spaced T_12")
        t.meta("t_a", t_a)
        t.meta("time_unit", "T_12")
        sums, curve = landscape_sum_curve(land)
        locs, _ = ranked_minima(np.asarray(sums) / t12, curve)
        if locs.size:
            t.meta("deepest_minima_of_sum", " ".join(fmt(v) for v in locs[:6]))
        for i, a in enumerate(steps):
            for j, b in enumerate(steps):
                t.add(a, b, land.delta_phi_eff[i, j], land.probability[i, j],
                      land.pattern_sum[i, j], bool(land.impossible[i, j]))
        return t, EXIT_OK

    times = [float(v) * unit for v in seq["times"]]
    signs = [int(v) for v in seq["signs"]]
    if not times:
        raise ConfigError("generic correlate mode needs sequence.times and sequence.signs")
    events = tuple(SignMeasure(tm, s, dphi) for tm, s in zip(times, signs))
    try:
        table = correlation_probability(state0, SequenceSpec(events), meas["threshold"],
                                        meas["quadrature_nodes"])
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    t = Table(["quantity", "pattern", "value"])
    _potential_meta(t, cfg)
    _times_meta(t, basis, manifest)
    t.meta("delta_phi", dphi)
    t.meta("threshold", meas["threshold"])
    t.meta("times", " ".join(fmt(v) for v in times))
    t.meta("requested_pattern", table.pattern)
    for pattern, p in table.probabilities.items():
        t.add("P", pattern, p)
    t.add("P_requested", table.pattern, table.probability)
    t.add("pattern_sum", "", table.total)
    if seq["lg"]:
        if len(times) != 3:
            raise ConfigError("sequence.lg needs exactly three times")
        pair = {}
        for name, (i, j) in {"ab": (0, 1), "bc": (1, 2), "ac": (0, 2)}.items():
            ev = (SignMeasure(times[i], 1, dphi), SignMeasure(times[j], 1, dphi))
            pair[name] = correlation_probability(state0, SequenceSpec(ev), meas["threshold"],
                                                 meas["quadrature_nodes"])
        lg = lg_correlator(pair["ab"], pair["bc"], pair["ac"])
        t.add("C_ab", "", lg.C_ab)
        t.add("C_bc", "", lg.C_bc)
        t.add("C_ac", "", lg.C_ac)
        t.add("K", "", lg.K)
        t.add("K_exceeds_macrorealist_bound", "", lg.violates)
    return t, EXIT_OK


def cmd_oracle_check(cfg: RunConfig, manifest: dict) -> tuple[Table, int]:
    spec = cfg.potential()
    orc = cfg["oracle"]
    dphi = cfg["measurement"]["delta_phi"]
    phi0 = cfg.phi0(spec)
    ref = _basis(cfg, spec)
    dt = cfg.dt_multiples()[0] * _unit_time(ref, cfg["sequence"]["dt_unit"])
    seq = (SequenceSpec.identical_outcomes(orc["events"], phi0, dphi, dt, start=dt)
           if orc["events"] > 0 else SequenceSpec(()))
    report = oracle_check(spec, seq, n_points=orc["n_points"], n_states=orc["n_states"],
                          fidelity_tol=orc["tolerance"], initial=cfg["sequence"]["initial"])
    t = Table(["check", "value", "threshold", "passed", "note"])
    _potential_meta(t, cfg)
    t.meta("oracle_points", orc["n_points"])
    t.meta("events", orc["events"])
    for note in report.notes:
        t.meta("note", note)
    for c in report.checks:
        t.add(c.name, c.value, c.threshold, c.passed, c.note.replace(",", ";"))
    t.meta("result", "pass" if report.passed else "FAIL")
    manifest["oracle"] = {"passed": report.passed, "notes": list(report.notes),
                          "checks": {c.name: c.passed for c in report.checks}}
    return t, EXIT_OK if report.passed else EXIT_ACCURACY


COMMANDS = {
    "spectrum": cmd_spectrum,
    "scan": cmd_scan,
    "correlate": cmd_correlate,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxmeas",
                                     description="Repeated flux measurements in double wells.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="TOML configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="built-in parameter set")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one configuration key")
        p.add_argument("-o", "--output", help="CSV path (overrides output.path; '-' = stdout)")
    return parser


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _emit(cfg: RunConfig, text: str, manifest: dict, stdout, stderr) -> None:
    path = cfg["output"]["path"]
    if path == "-":
        stdout.write(text)
        if cfg["output"]["manifest"]:
            stderr.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    manifest["output"] = path
    if cfg["output"]["manifest"]:
        with open(path + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.output is not None:
            overrides.append(f"output.path='{args.output}'")
        cfg = load_config(args.config, overrides, args.preset)
    except ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG

    manifest = {
        "command": args.command,
        "preset": args.preset,
        "config": cfg.as_dict(),
        "conventions": CONVENTIONS,
        "versions": {"fluxmeas": _version(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            table, code = COMMANDS[args.command](cfg, manifest)
        except ConfigError as exc:
            stderr.write(f"config error: {exc}\n")
            return EXIT_CONFIG
        except StepSizeError as exc:
            stderr.write(f"accuracy failure: {exc}\n")
            return EXIT_ACCURACY
        except (SolverFailure, DegenerateError, OrthogonalTrialError) as exc:
            stderr.write(f"solver failure: {exc}\n")
            return EXIT_SOLVER
        except FluxMeasError as exc:
            stderr.write(f"error: {exc}\n")
            return EXIT_SOLVER
    messages = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    for m in messages:
        stderr.write(f"warning: {m}\n")
    manifest["warnings"] = messages
    manifest["exit_code"] = code
    try:
        _emit(cfg, table.render(), _json_safe(manifest), stdout, stderr)
    except OSError as exc:
        stderr.write(f"config error: cannot write output: {exc}\n")
        return EXIT_CONFIG
    if code == EXIT_ACCURACY:
        stderr.write("accuracy check failed; see the report\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
