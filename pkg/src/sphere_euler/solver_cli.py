"""Command-line front end: configuration, presets, artifact serialization.

Subcommands:
    run        iterate the three-stage solver, write snapshots/ledger/summary
    transport  exact and entropic transport between two densities
    jko        a single variational corrector step with its certificates
    diagnose   inequality checks on stored run artifacts

Artifacts are NDJSON (snapshots), CSV (ledger), and JSON (summaries), all
carrying a format_version field. Floats are serialized with the shortest
round-trip decimal representation (at most 17 significant digits), so
rereading an artifact reproduces bit-identical values and identical
configurations yield byte-identical outputs.

Exit codes: 0 success, 2 configuration errors, 3 numerical aborts or
corrupted artifacts (partial artifacts are still written when possible).
"""

import argparse
import json
import os
import sys

import numpy as np

from .mesh import build_icosphere, Density
from .energy import theta_power, theta_log, internal_energy, special_fisher
from . import ot
from . import jko as jko_mod
from . import euler_solver as es
from . import tangent_flow as tf

FORMAT_VERSION = 1


class ConfigError(Exception):
    pass


def _limit_threads():
    val = os.environ.get("SPHERE_EULER_THREADS")
    if not val:
        return
    try:
        n = max(1, int(val))
    except ValueError:
        raise ConfigError("SPHERE_EULER_THREADS must be an integer")
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _require(config, field, kind=None):
    if field not in config:
        raise ConfigError("missing config field %r" % field)
    value = config[field]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError("config field %r has the wrong type" % field)
    return value


def load_config(path):
    if not path:
        raise ConfigError("a --config file is required")
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except json.JSONDecodeError as exc:
        raise ConfigError("config file is not valid JSON: %s" % exc)
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def build_law(config):
    law = config.get("law", {"variant": "power", "gamma": 1.4})
    variant = law.get("variant", "power")
    if variant == "power":
        gamma = law.get("gamma")
        if gamma is None:
            raise ConfigError("missing config field 'law.gamma'")
        if not gamma > 1:
            raise ConfigError("config field 'law.gamma' must exceed 1")
        return theta_power(float(gamma), float(law.get("coeff", 1.0)))
    if variant == "log":
        return theta_log()
    raise ConfigError("config field 'law.variant' must be 'power' or 'log'")


def build_mesh(config):
    level = _require(config, "mesh_level", int)
    if not 1 <= level <= 6:
        raise ConfigError("config field 'mesh_level' must lie in [1, 6]")
    return build_icosphere(level)


def _validate_run(config):
    h = _require(config, "h", (int, float))
    tau = _require(config, "tau", (int, float))
    if h <= 0:
        raise ConfigError("config field 'h' must be positive")
    if tau < h:
        raise ConfigError("config field 'tau' must be at least h")
    eps_factor = config.get("eps_factor", 2.0)
    if eps_factor < 0:
        raise ConfigError("config field 'eps_factor' must be nonnegative")
    return {"h": float(h), "tau": float(tau), "eps_factor": float(eps_factor),
            "initial": config.get("initial", {"preset": "static"}),
            "jko": config.get("jko")}


def _density_from_spec(mesh, spec, label):
    if not isinstance(spec, dict):
        raise ConfigError("config field %r must be an object" % label)
    if "file" in spec:
        try:
            values = np.loadtxt(spec["file"])
        except (OSError, ValueError) as exc:
            raise ConfigError("could not read density file for %r: %s"
                              % (label, exc))
        if values.ndim != 1 or len(values) != mesh.n:
            raise ConfigError("density file for %r must hold %d values"
                              % (label, mesh.n))
        try:
            return Density(mesh, values)
        except ValueError as exc:
            raise ConfigError("invalid density for %r: %s" % (label, exc))
    if "preset" in spec or not spec:
        try:
            rho, _ = es.make_initial(mesh, spec or {"preset": "static"})
        except ValueError as exc:
            raise ConfigError("invalid preset for %r: %s" % (label, exc))
        return rho
    if "node" in spec:
        # a discrete point mass at one node
        i = int(spec["node"])
        values = np.zeros(mesh.n)
        values[i] = 1.0 / mesh.weights[i]
        return Density(mesh, values)
    raise ConfigError("config field %r needs 'preset', 'file', or 'node'"
                      % label)


# -- serialization ----------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True)


def write_artifacts(outdir, mesh, config, states, ledger, seed,
                    aborted=None):
    os.makedirs(outdir, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, "kind": "header",
              "mesh_level": config["mesh_level"],
              "mesh_checksum": mesh.checksum, "n": mesh.n,
              "law": config.get("law", {"variant": "power", "gamma": 1.4}),
              "h": config["h"], "tau": config["tau"],
              "eps_factor": config.get("eps_factor", 2.0),
              "initial": config.get("initial", {"preset": "static"}),
              "seed": seed}
    with open(os.path.join(outdir, "snapshots.ndjson"), "w") as fh:
        fh.write(dumps(header) + "\n")
        for k, st in enumerate(states):
            row = ledger.rows[k] if k < len(ledger.rows) else {}
            snap = {"format_version": FORMAT_VERSION, "kind": "snapshot",
                    "step": k, "t": st.t, "rho": st.rho.values,
                    "q": st.q, "v": st.v, "ledger": row}
            fh.write(dumps(snap) + "\n")
    with open(os.path.join(outdir, "ledger.csv"), "w") as fh:
        cols = es.EnergyLedger.COLUMNS
        fh.write(",".join(cols) + "\n")
        for row in ledger.rows:
            fh.write(",".join(repr(float(row[c])) if c != "step"
                              else str(int(row[c])) for c in cols) + "\n")
    H = ledger.column("hamiltonian")
    summary = {"format_version": FORMAT_VERSION,
               "config": config, "seed": seed,
               "mesh_checksum": mesh.checksum,
               "steps": len(states) - 1,
               "final_t": states[-1].t,
               "final_hamiltonian": float(H[-1]),
               "hamiltonian_drop": float(H[0] - H[-1]),
               "hamiltonian_monotone": bool(np.all(np.diff(H) <= 1e-12
                                                   + ledger.column("budget")[1:])),
               "dissipation_floor_ok": bool(np.all(
                   ledger.column("dissipation_margin")[1:]
                   >= -ledger.column("budget")[1:])) if len(H) > 1 else True,
               "mass_error_max": float(max(abs(s.rho.mass() - 1.0)
                                           for s in states)),
               "min_density": float(min(np.min(s.rho.values) for s in states)),
               "max_density": float(max(np.max(s.rho.values) for s in states)),
               "aborted": aborted}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        fh.write(dumps(summary) + "\n")


def load_run(outdir):
    path = os.path.join(outdir, "snapshots.ndjson")
    if not os.path.exists(path):
        raise ConfigError("missing artifact: %s" % path)
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ConfigError("snapshots.ndjson lacks a header line")
    header = lines[0]
    mesh = build_icosphere(int(header["mesh_level"]))
    if mesh.checksum != header["mesh_checksum"]:
        raise ValueError("mesh checksum mismatch in %s" % path)
    states = []
    for rec in lines[1:]:
        rho = Density(mesh, np.array(rec["rho"], float))  # mass invariant
        st = es.SolverState(rho, np.array(rec["q"], float), t=float(rec["t"]))
        st.w = np.array(rec["v"], float) - mesh.gradient(st.q)
        st.ledger_row = rec.get("ledger", {})
        states.append(st)
    return header, mesh, states


# -- subcommands ------------------------------------------------------------

def cmd_run(args):
    config = load_config(args.config)
    mesh = build_mesh(config)
    theta = build_law(config)
    run_cfg = _validate_run(config)
    outdir = args.out or "."
    try:
        states, ledger = es.run(mesh, theta, run_cfg)
    except es.NumericalAbort as exc:
        write_artifacts(outdir, mesh, config, exc.snapshots, exc.ledger,
                        args.seed, aborted=str(exc))
        print("numerical abort: %s" % exc, file=sys.stderr)
        return 3
    write_artifacts(outdir, mesh, config, states, ledger, args.seed)
    print("run complete: %d steps, artifacts in %s"
          % (len(states) - 1, outdir))
    return 0


def cmd_transport(args):
    config = load_config(args.config)
    mesh = build_mesh(config)
    mu = _density_from_spec(mesh, _require(config, "mu", dict), "mu")
    nu = _density_from_spec(mesh, _require(config, "nu", dict), "nu")
    value, _ = ot.w2_squared_exact(mu, nu)
    report = {"format_version": FORMAT_VERSION,
              "w2_squared_halfcost": value,     # cost d^2/2 (1/p inside)
              "w2_squared_standard": 2 * value,  # cost d^2
              "w2_standard": float(np.sqrt(2 * value))}
    reg = config.get("reg")
    if reg is not None:
        sv, _, _ = ot.sinkhorn(mu, nu, float(reg))
        report["sinkhorn_value"] = sv
        report["sinkhorn_reg"] = float(reg)
    if args.check_duality or config.get("check_duality"):
        C = ot.cost_matrix(mesh.nodes, mesh.nodes)
        _, _, u, v = ot.transport_lp(mu.values * mesh.weights,
                                     nu.values * mesh.weights, C)
        dual = float(np.dot(mu.values * mesh.weights, u)
                     + np.dot(nu.values * mesh.weights, v))
        report["primal"] = value
        report["dual"] = dual
        report["duality_gap"] = value - dual
    line = dumps(report)
    print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "transport.json"), "w") as fh:
            fh.write(line + "\n")
    return 0


def cmd_jko(args):
    config = load_config(args.config)
    mesh = build_mesh(config)
    theta = build_law(config)
    h = _require(config, "h", (int, float))
    if h < 0:
        raise ConfigError("config field 'h' must be nonnegative")
    f = _density_from_spec(mesh, config.get("initial", {"preset": "zonal"}),
                           "initial")
    try:
        result = jko_mod.jko_step(f, float(h), theta, config.get("jko"))
    except jko_mod.JkoConvergenceError as exc:
        print("jko did not converge: %s" % exc, file=sys.stderr)
        return 3
    delta1 = float(np.min(f.values))
    report = {"format_version": FORMAT_VERSION,
              "value": result.value,
              "iterations": result.iterations,
              "optimality_residual": result.optimality_residual,
              "internal_energy_prior": internal_energy(f, theta),
              "internal_energy": internal_energy(result.rho_h, theta),
              "fisher": special_fisher(result.rho_h, theta),
              "fisher_gap_margin": jko_mod.fisher_gap_check(
                  f, result, float(h), theta),
              "bounds_ok": jko_mod.minimizer_bounds_check(result, delta1),
              "min_density": float(np.min(result.rho_h.values)),
              "max_density": float(np.max(result.rho_h.values))}
    line = dumps(report)
    print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "jko_result.json"), "w") as fh:
            fh.write(line + "\n")
    return 0


def cmd_diagnose(args):
    rundir = args.out or "."
    header, mesh, states = load_run(rundir)
    if len(states) < 2:
        raise ConfigError("run in %s holds fewer than two snapshots" % rundir)
    law_cfg = {"law": header.get("law", {"variant": "power", "gamma": 1.4})}
    theta = build_law(law_cfg)
    times = [s.t for s in states]
    dens = [s.rho for s in states]
    vels = [s.v for s in states]
    tau = times[-1]
    checks = {}
    margins = np.array([s.ledger_row.get("dissipation_margin", 0.0)
                        for s in states[1:]])
    budgets = np.array([s.ledger_row.get("budget", 0.0)
                        for s in states[1:]])
    checks["dissipation_floor"] = {
        "ok": bool(np.all(margins >= -budgets)),
        "min_margin": float(np.min(margins)) if len(margins) else 0.0}
    mass_err = max(abs(d.mass() - 1.0) for d in dens)
    checks["mass_conservation"] = {"ok": bool(mass_err <= 1e-10),
                                   "max_error": float(mass_err)}
    onofri = es.onofri_check(mesh, states[-1].q)
    checks["onofri"] = {"ok": bool(onofri >= -1e-4), "margin": float(onofri)}
    psi = lambda X, t: X[:, 2] * (1.0 - t / max(tau, 1e-300))
    wc = es.weak_continuity_residual(mesh, dens, vels, times, psi)
    checks["weak_continuity"] = {"residual": float(wc),
                                 "ok": bool(wc <= 10 * mesh.spacing ** 2)}
    vort = tf.vorticity_diagnostic(mesh, vels)
    checks["vorticity"] = {
        "sup_curl_initial": float(vort["sup_curl"][0]),
        "sup_curl_final": float(vort["sup_curl"][-1]),
        "circulation_drift": float(np.max(np.abs(
            vort["circulations"] - vort["circulations"][0])))}
    if len(dens) >= 3:
        pr = tf.path_regularity(dens, times, [s.q for s in states], theta)
        # Discrete resampling moves O(spacing^2) of density per step, so the
        # step sum carries a mesh-noise floor of about spacing^4 per unit time
        # that the continuum rate estimate cannot see.
        dt = times[1] - times[0]
        allowance = (len(dens) - 1) * mesh.spacing ** 4 / max(dt, 1e-300)
        checks["path_regularity"] = {
            "sum": float(pr["sum"]), "bound": float(pr["bound"]),
            "mesh_allowance": float(allowance),
            "ok": bool(pr["sum"] <= pr["bound"] + allowance)}
    compare = None
    if args.config:
        cfg = load_config(args.config)
        compare = cfg.get("compare_with")
    if compare:
        header_b, mesh_b, states_b = load_run(compare)
        if header_b["mesh_checksum"] != header["mesh_checksum"]:
            raise ConfigError("compare_with run uses a different mesh")
        g = es.gronwall_compare(mesh, theta, times, dens,
                                [s.t for s in states_b],
                                [s.rho for s in states_b])
        checks["gronwall"] = {"times": g["times"], "w1": g["w1"],
                              "eta": g["eta"], "bound": g["bound"],
                              "K": g["K"]}
    report = {"format_version": FORMAT_VERSION, "run": rundir,
              "checks": checks,
              "all_ok": bool(all(c.get("ok", True)
                                 for c in checks.values()))}
    with open(os.path.join(rundir, "diagnostics.json"), "w") as fh:
        fh.write(dumps(report) + "\n")
    print(dumps({"all_ok": report["all_ok"],
                 "checks": {k: v.get("ok", None)
                            for k, v in checks.items()}}))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sphere-euler",
        description="Desk-scale isentropic flow solver on the unit sphere.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("transport", cmd_transport),
                     ("jko", cmd_jko), ("diagnose", cmd_diagnose)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=0)
        if name == "transport":
            p.add_argument("--check-duality", action="store_true")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        _limit_threads()
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except ValueError as exc:
        print("invariant failure: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
