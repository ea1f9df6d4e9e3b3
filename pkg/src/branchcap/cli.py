"""Command-line orchestration: subcommands, config, seeds, and artifacts.

Subcommands: bcap (capacity estimation), wiener (shell series and verdict),
oracle (field exports), validate (identity and bridge suites), simulate
(raw tree and snake draws).  A run is a pure function of its RunConfig:
the same config (seed and workers included) produces byte-identical primary
outputs, and worker count never changes results because all sampling is
keyed by the counter-based RNG over fixed chunk boundaries; workers only
cap the compute thread pool.

Exit codes: 0 success, 2 configuration error, 3 convergence/budget failure,
4 identity-suite failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capacity import (_json_safe, estimate_bcap, subspace_ball,
                       write_capacity_csv)
from .errors import BranchcapError, BudgetExceeded, ConfigError, NoConvergence
from .lattice import (WindowSpec, build_jump_distribution, green_constant,
                      theta_preset)
from .oracle import (DEFAULT_TOL, LatticeField, check_first_visit,
                     field_summary, green_column_field, occupation_pathsum,
                     p_via_green, q_via_green_with_deficit, restriction_ratio,
                     solve_visit_fixpoint, solve_visit_radiation, write_field)
from .rng import stream
from .snakes import TargetSet, estimate_p, estimate_q, label_tree
from .trees import (offspring_preset, sample_gw_tree, sample_kesten_tree,
                    validate_offspring)
from .wiener import (InfiniteSetSpec, preset_spec, wiener_series,
                     write_terms_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IDENTITY = 4

# One table for every default; flags and config files override per key.
DEFAULTS = {
    "theta": "srw5",
    "mu": "binary",
    "seed": 0,
    "workers": 1,
    "out": "branchcap-out",
    "bcap": {
        "target": "origin",
        "n_samples": 400_000,
        "method": "mc",
        "radii": None,
        "probes_per_radius": None,
        "node_cap": None,
        "tol": DEFAULT_TOL,
    },
    "wiener": {
        "preset": "hyperplane",
        "set": None,
        "n_lo": 2,
        "n_hi": 4,
        "n_samples": 2_000_000,
        "method": "mc",
        "shell_cap": 20_000,
        "node_cap": None,
    },
    "oracle": {
        "target": "origin",
        "window_radius": 8,
        "fields": ["visit_p", "killing"],
        "closure": "lower",
        "probes": None,
        "tol": DEFAULT_TOL,
    },
    "validate": {
        "radius": 8,
        "bridge_samples": 100_000,
        "bridge": True,
        "tol": DEFAULT_TOL,
        "identity_threshold": 1e-6,
    },
    "simulate": {
        "mode": "finite",
        "n_samples": 1_000,
        "node_cap": 200_000,
        "spine_len": 512,
        "save_arrays": True,
    },
    "quick": {
        "bcap": {"n_samples": 40_000},
        "wiener": {"n_samples": 200_000, "n_hi": 3},
        "oracle": {"window_radius": 6},
        "validate": {"radius": 5, "bridge": False},
        "simulate": {"n_samples": 100},
    },
}


@dataclass
class RunConfig:
    """Everything a run depends on; serialized verbatim into the manifest."""

    command: str
    theta: object = "srw5"
    mu: object = "binary"
    seed: int = 0
    workers: int = 1
    out: str = "branchcap-out"
    quick: bool = False
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"command": self.command, "theta": _json_safe(self.theta),
                "mu": _json_safe(self.mu), "seed": self.seed,
                "workers": self.workers, "out": self.out,
                "quick": self.quick, "params": _json_safe(self.params)}


def build_config(command: str, cli_overrides: dict,
                 config_path=None) -> RunConfig:
    """Merge defaults, then the config file, then CLI flags."""
    merged = {"theta": DEFAULTS["theta"], "mu": DEFAULTS["mu"],
              "seed": DEFAULTS["seed"], "workers": DEFAULTS["workers"],
              "out": DEFAULTS["out"], "quick": False,
              "params": dict(DEFAULTS[command])}
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        if file_cfg.get("command", command) != command:
            raise ConfigError(
                f"config file is for {file_cfg['command']!r}, not {command!r}")
        for key in ("theta", "mu", "seed", "workers", "out", "quick"):
            if key in file_cfg:
                merged[key] = file_cfg[key]
        merged["params"].update(file_cfg.get("params", {}))
    # quick is a preset bundle: apply it before explicit flags so that
    # e.g. --quick --samples 500 keeps the requested sample count
    if cli_overrides.get("quick") or merged["quick"]:
        merged["quick"] = True
        merged["params"].update(DEFAULTS["quick"].get(command, {}))
    for key, val in cli_overrides.items():
        if val is None:
            continue
        if key in ("theta", "mu", "seed", "workers", "out", "quick"):
            merged[key] = val
        else:
            merged["params"][key] = val
    if not isinstance(merged["seed"], int) or merged["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(merged["workers"], int) or merged["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    return RunConfig(command, merged["theta"], merged["mu"], merged["seed"],
                     merged["workers"], merged["out"], merged["quick"],
                     merged["params"])


# --- spec resolution --------------------------------------------------------

def resolve_theta(spec):
    if isinstance(spec, str):
        return theta_preset(spec)
    if isinstance(spec, dict) and "atoms" in spec:
        return build_jump_distribution(spec["atoms"], spec["probs"],
                                       name=spec.get("name", "custom"))
    raise ConfigError(f"cannot interpret step spec {spec!r}")


def resolve_mu(spec):
    if isinstance(spec, str):
        return offspring_preset(spec)
    if isinstance(spec, dict) and "pmf" in spec:
        return validate_offspring(spec["pmf"], name=spec.get("name", "custom"))
    raise ConfigError(f"cannot interpret offspring spec {spec!r}")


def resolve_target(spec, dim: int) -> TargetSet:
    if spec == "origin":
        return TargetSet(np.zeros((1, dim), dtype=np.int64), name="origin")
    if isinstance(spec, dict) and "points" in spec:
        return TargetSet(np.asarray(spec["points"], dtype=np.int64),
                         name=spec.get("name", "points"))
    if isinstance(spec, dict) and "ball" in spec:
        b = spec["ball"]
        return subspace_ball(dim, int(b["m"]), float(b["radius"]))
    if isinstance(spec, dict) and "annulus" in spec:
        a = spec["annulus"]
        return TargetSet.subspace_annulus(dim, int(a["m"]), int(a["lo2"]),
                                          int(a["hi2"]),
                                          name=spec.get("name", "annulus"))
    raise ConfigError(f"cannot interpret target spec {spec!r}")


def _set_thread_cap(workers: int) -> None:
    # worker counts above the machine's thread budget are allowed and clamped
    try:
        import numba
        numba.set_num_threads(
            max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


# --- artifact plumbing ------------------------------------------------------

def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_json_safe(obj), sort_keys=True, indent=2)
                    + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, cfg: RunConfig, t0: float,
                   outputs) -> Path:
    # wall time goes to stderr, not the manifest: every file in the output
    # directory must be byte-identical across reruns of the same config
    import numba
    import scipy
    manifest = {
        "config": cfg.to_json(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
            "branchcap": _package_version(),
        },
        "outputs": {name: _sha256(out_dir / name) for name in sorted(outputs)},
    }
    path = out_dir / "manifest.json"
    _dump_json(manifest, path)
    print("[branchcap] %s finished in %.1f s -> %s"
          % (cfg.command, time.time() - t0, out_dir), file=sys.stderr)
    return path


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("branchcap")
    except Exception:
        return "unknown"


# --- subcommands ------------------------------------------------------------

def cmd_bcap(cfg: RunConfig, out_dir: Path) -> int:
    theta = resolve_theta(cfg.theta)
    mu = resolve_mu(cfg.mu)
    p = cfg.params
    A = resolve_target(p["target"], theta.dim)
    radii = tuple(p["radii"]) if p.get("radii") else None
    est = estimate_bcap(A, theta, mu, radii=radii,
                        probes_per_radius=p.get("probes_per_radius"),
                        n_samples=int(p["n_samples"]), method=p["method"],
                        node_cap=p.get("node_cap"), seed=cfg.seed,
                        tol=p.get("tol", DEFAULT_TOL))
    results = {"command": "bcap", "target": getattr(A, "name", ""),
               "estimate": est.to_json()}
    _dump_json(results, out_dir / "results.json")
    outputs = ["results.json"]
    if est.meta.get("probes"):
        write_capacity_csv(est, out_dir / "capacity.csv")
        outputs.append("capacity.csv")
    return _finish_run(cfg, out_dir, outputs)


def cmd_wiener(cfg: RunConfig, out_dir: Path) -> int:
    theta = resolve_theta(cfg.theta)
    mu = resolve_mu(cfg.mu)
    p = cfg.params
    if p.get("set"):
        spec = InfiniteSetSpec.from_json(p["set"], dim=theta.dim)
    else:
        spec = preset_spec(p["preset"], dim=theta.dim)
    report = wiener_series(spec, int(p["n_lo"]), int(p["n_hi"]), theta, mu,
                           n_samples=int(p["n_samples"]), method=p["method"],
                           shell_cap=int(p["shell_cap"]),
                           node_cap=p.get("node_cap"), seed=cfg.seed)
    _dump_json({"command": "wiener", "report": report.to_json()},
               out_dir / "results.json")
    write_terms_csv(report, out_dir / "terms.csv")
    return _finish_run(cfg, out_dir, ["results.json", "terms.csv"])


def cmd_oracle(cfg: RunConfig, out_dir: Path) -> int:
    theta = resolve_theta(cfg.theta)
    mu = resolve_mu(cfg.mu)
    p = cfg.params
    A = resolve_target(p["target"], theta.dim)
    window = WindowSpec((0,) * theta.dim, float(p["window_radius"]))
    tol = p.get("tol", DEFAULT_TOL)
    wanted = list(p["fields"])
    bad = [f for f in wanted if f not in
           ("visit_p", "visit_r", "killing", "green_column")]
    if bad:
        raise ConfigError(f"unknown field request {bad}")
    if p.get("closure") == "radiation":
        pf, rf = solve_visit_radiation(A, mu, theta, window, tol=tol)
    else:
        pf, rf = solve_visit_fixpoint(A, mu, theta, window, tol=tol)
    by_tag = {"visit_p": pf, "visit_r": rf}
    if "killing" in wanted:
        by_tag["killing"] = LatticeField(
            rf.window, "killing", rf.values, deficit=rf.deficit,
            deficit_values=rf.deficit_values, meta=dict(rf.meta),
            lattice=rf.lattice)
    if "green_column" in wanted:
        y = np.zeros(theta.dim, dtype=np.int64) if A.mode != "points" \
            else A.points[0]
        by_tag["green_column"] = green_column_field(rf, y, tol=tol)
    probes = p.get("probes")
    if probes is None:
        r = max(int(window.radius) // 2, 1)
        probes = [[r] + [0] * (theta.dim - 1)]
    outputs, summaries = [], {}
    for tag in wanted:
        fname = f"field_{tag}.bin"
        write_field(by_tag[tag], out_dir / fname)
        outputs.append(fname)
        summaries[tag] = field_summary(by_tag[tag], probes)
    _dump_json({"command": "oracle", "window_radius": window.radius,
                "closure": p.get("closure", "lower"), "fields": summaries},
               out_dir / "results.json")
    return _finish_run(cfg, out_dir, outputs + ["results.json"])


def cmd_validate(cfg: RunConfig, out_dir: Path) -> int:
    theta = resolve_theta(cfg.theta)
    mu = resolve_mu(cfg.mu)
    p = cfg.params
    report = validation_suite(theta, mu, radius=float(p["radius"]),
                              bridge=bool(p.get("bridge", True)),
                              bridge_samples=int(p["bridge_samples"]),
                              threshold=float(p["identity_threshold"]),
                              tol=p.get("tol", DEFAULT_TOL), seed=cfg.seed)
    _dump_json({"command": "validate", "report": report},
               out_dir / "results.json")
    code = _finish_run(cfg, out_dir, ["results.json"])
    if code == EXIT_OK and not report["passed"]:
        return EXIT_IDENTITY
    return code


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    theta = resolve_theta(cfg.theta)
    mu = resolve_mu(cfg.mu)
    p = cfg.params
    mode = p["mode"]
    if mode not in ("finite", "kesten"):
        raise ConfigError(f"unknown simulate mode {mode!r}")
    n = int(p["n_samples"])
    cap = int(p["node_cap"])
    spine = int(p["spine_len"])
    origin = np.zeros(theta.dim, dtype=np.int64)
    sizes = np.empty(n, dtype=np.int64)
    spread = np.empty(n, dtype=np.float64)
    ends = np.empty((n, theta.dim), dtype=np.int64)
    for i in range(n):
        rng = stream(cfg.seed, f"simulate/{mode}", i)
        if mode == "finite":
            tree = sample_gw_tree(mu, rng, cap)
        else:
            tree = sample_kesten_tree(mu, spine, rng, cap)
        real = label_tree(tree, theta, origin, rng)
        sizes[i] = tree.n
        spread[i] = float(np.sqrt((real.labels ** 2).sum(axis=1).max()))
        ends[i] = real.labels[-1]
    results = {
        "command": "simulate", "mode": mode, "n_samples": n,
        "mean_size": float(sizes.mean()),
        "max_size": int(sizes.max()),
        "capped_fraction": float(np.mean(sizes >= cap)),
        "mean_spread": float(spread.mean()),
        "max_spread": float(spread.max()),
    }
    outputs = ["results.json"]
    if p.get("save_arrays", True):
        np.save(out_dir / "sizes.npy", sizes)
        np.save(out_dir / "spread.npy", spread)
        np.save(out_dir / "endpoints.npy", ends)
        outputs += ["sizes.npy", "spread.npy", "endpoints.npy"]
    _dump_json(results, out_dir / "results.json")
    return _finish_run(cfg, out_dir, outputs)


def _finish_run(cfg: RunConfig, out_dir: Path, outputs) -> int:
    write_manifest(out_dir, cfg, cfg._t0, outputs)
    return EXIT_OK


# --- the identity and bridge suites ----------------------------------------

def _ball_points(dim: int, radius: int) -> np.ndarray:
    axes = [np.arange(-radius, radius + 1)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    return grid[(grid ** 2).sum(axis=1) <= radius * radius]


def validation_suite(theta, mu, radius: float = 8.0, bridge: bool = True,
                     bridge_samples: int = 100_000, threshold: float = 1e-6,
                     tol: float = DEFAULT_TOL, seed: int = 0) -> dict:
    """Exact-identity residuals, the MC bridge, and recorded constants.

    Identities (all exact up to solver tolerance): the four first/last-visit
    path decompositions, the visit probability as a killed Green sum over
    the target, and the occupation path-sum identity.  The bridge compares
    MC visit estimates against oracle fields within 3 combined stderr plus
    the oracle's closure deficit.
    """
    d = theta.dim
    window = WindowSpec((0,) * d, radius)
    origin = np.zeros(d, dtype=np.int64)
    e1 = np.eye(d, dtype=np.int64)[0]
    e2 = np.eye(d, dtype=np.int64)[1]
    targets = {
        "point": TargetSet(origin.reshape(1, -1), name="origin"),
        "triple": TargetSet(np.stack([origin, 2 * e1, e2]), name="triple"),
    }
    B = _ball_points(d, 2)
    checks = []

    def record(name, target, residual, scale=1.0):
        ok = residual <= threshold * max(scale, 1.0)
        checks.append({"name": name, "target": target,
                       "residual": float(residual), "passed": bool(ok)})
        return ok

    for tname, A in targets.items():
        pf, rf = solve_visit_fixpoint(A, mu, theta, window, tol)
        gf = p_via_green(A, mu, theta, window, tol)
        record("visit_equals_green_sum", tname,
               float(np.max(np.abs(pf.values - gf.values))))
        res4 = check_first_visit(A, B, origin, 3 * e1, window, mu, theta, tol)
        for i, nm in enumerate(("first_exit_fwd", "last_in_fwd",
                                "first_in_bwd", "last_exit_bwd")):
            record(f"path_decomposition_{nm}", tname, float(res4[i]))
        lhs, rhs = occupation_pathsum(A, B, 3 * e1, mu, theta, window, tol)
        record("occupation_pathsum", tname, abs(lhs - rhs), scale=abs(lhs))

    bridge_rows = []
    if bridge:
        A = targets["point"]
        pf, rf = solve_visit_fixpoint(A, mu, theta, window, tol)
        p_probes = [2 * e1, 3 * e1, e1 + e2 + np.eye(d, dtype=np.int64)[2],
                    2 * e1 + 2 * e2, 4 * e1, e1 + 2 * e2]
        for i, x in enumerate(p_probes):
            est = estimate_p(A, x, theta, mu, bridge_samples,
                             node_cap=50_000, seed=seed + 11 * i)
            ora = pf.at(x)
            dfc = pf.deficit_at(x)
            gap = abs(est.value + 0.5 * est.truncation_bias_bound - ora)
            tol_band = 3.0 * (est.stderr + 0.5 * est.truncation_bias_bound) + dfc
            bridge_rows.append({
                "kind": "p", "point": x.tolist(), "mc": est.value,
                "stderr": est.stderr, "bias_bound": est.truncation_bias_bound,
                "oracle": ora, "deficit": dfc, "gap": float(gap),
                "band": float(tol_band), "passed": bool(gap <= tol_band)})
        q_probes = [2 * e1, 3 * e1, e1 + e2, 2 * e1 + e2, 2 * e2, e1 + 2 * e2]
        for i, x in enumerate(q_probes):
            est = estimate_q(A, x, theta, mu, bridge_samples, spine_len=256,
                             seed=seed + 13 * i)
            q_lo, q_def = q_via_green_with_deficit(A, x, mu, theta, window,
                                                   tol)
            # both sides undershoot the true q: the MC by its truncation
            # bound, the oracle by its closure deficit
            gap = est.value - q_lo
            mc_bias = est.truncation_bias_bound
            tol_band = 3.0 * est.stderr + q_def
            passed = -(3.0 * est.stderr + mc_bias) <= gap <= tol_band
            bridge_rows.append({
                "kind": "q", "point": x.tolist(), "mc": est.value,
                "stderr": est.stderr, "oracle_lower": float(q_lo),
                "deficit": float(q_def), "gap": float(gap),
                "band": float(tol_band), "passed": bool(passed)})

    constants = _recorded_constants(theta, mu, window, tol, full=bridge)
    passed = all(c["passed"] for c in checks) and \
        all(r["passed"] for r in bridge_rows)
    return {"passed": bool(passed), "radius": radius, "threshold": threshold,
            "identities": checks, "bridge": bridge_rows,
            "constants": constants}


def _recorded_constants(theta, mu, window, tol, full: bool) -> list:
    """Every comparability constant the pipelines rely on, with its band."""
    from .oracle import _GREEN_SAFETY, _TAIL_SAFETY
    out = [
        {"name": "green_constant", "value": green_constant(theta),
         "band": None, "note": "exact asymptotic prefactor"},
        {"name": "tail_safety", "value": _TAIL_SAFETY, "band": [1.0, 4.0],
         "note": "far-field deficit multiplier"},
        {"name": "green_tail_safety", "value": _GREEN_SAFETY,
         "band": [1.0, 2.0], "note": "free-Green deficit multiplier"},
    ]
    if full:
        A = TargetSet(np.zeros((1, theta.dim), dtype=np.int64))
        x = 2 * np.eye(theta.dim, dtype=np.int64)[0]
        rp, rq = restriction_ratio(A, x, mu, theta, n=2, window=window,
                                   tol=tol)
        out.append({"name": "restriction_ratio_p", "value": float(rp),
                    "band": [0.0, 1.0], "note": "ball-confined path mass"})
        out.append({"name": "restriction_ratio_q", "value": float(rq),
                    "band": [0.0, 1.0], "note": "ball-confined path mass"})
    return out


# --- entry point ------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON RunConfig file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--quick", action="store_true", default=None,
                     help="reduced-size preset for smoke runs")
    sub.add_argument("--theta", default=None, help="step preset name")
    sub.add_argument("--mu", default=None, help="offspring preset name")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="branchcap",
        description="Critical branching random walks: capacity, oracles, "
                    "and the shell series recurrence test.")
    sp = ap.add_subparsers(dest="command", required=True)

    b = sp.add_parser("bcap", help="estimate branching capacity")
    _add_common(b)
    b.add_argument("--method", choices=("mc", "oracle"), default=None)
    b.add_argument("--samples", type=int, default=None, dest="n_samples")
    b.add_argument("--target", default=None,
                   help='"origin" or a JSON target spec')

    w = sp.add_parser("wiener", help="shell series and recurrence verdict")
    _add_common(w)
    w.add_argument("--preset", default=None,
                   choices=("hyperplane", "axis", "powers_of_2", "finite"))
    w.add_argument("--set-json", default=None, dest="set",
                   help="inline InfiniteSetSpec JSON")
    w.add_argument("--levels", default=None,
                   help="shell range as LO:HI (e.g. 2:4)")
    w.add_argument("--samples", type=int, default=None, dest="n_samples")
    w.add_argument("--method", choices=("mc", "oracle"), default=None)

    o = sp.add_parser("oracle", help="solve and export lattice fields")
    _add_common(o)
    o.add_argument("--radius", type=float, default=None, dest="window_radius")
    o.add_argument("--fields", default=None,
                   help="comma list from visit_p,visit_r,killing,green_column")
    o.add_argument("--closure", choices=("lower", "radiation"), default=None)
    o.add_argument("--target", default=None)

    v = sp.add_parser("validate", help="identity and MC-bridge suites")
    _add_common(v)
    v.add_argument("--radius", type=float, default=None)
    v.add_argument("--no-bridge", action="store_false", default=None,
                   dest="bridge")

    s = sp.add_parser("simulate", help="raw tree and snake sampling")
    _add_common(s)
    s.add_argument("--mode", choices=("finite", "kesten"), default=None)
    s.add_argument("--samples", type=int, default=None, dest="n_samples")
    return ap


def _overrides_from(args) -> dict:
    skip = {"command", "config"}
    out = {}
    for key, val in vars(args).items():
        if key in skip or val is None:
            continue
        if key == "target" and isinstance(val, str) and val != "origin":
            val = json.loads(val)
        if key == "set" and isinstance(val, str):
            val = json.loads(val)
        if key == "fields" and isinstance(val, str):
            val = val.split(",")
        if key == "levels":
            lo, hi = val.split(":")
            out["n_lo"], out["n_hi"] = int(lo), int(hi)
            continue
        out[key] = val
    return out


COMMANDS = {"bcap": cmd_bcap, "wiener": cmd_wiener, "oracle": cmd_oracle,
            "validate": cmd_validate, "simulate": cmd_simulate}


def run(cfg: RunConfig) -> int:
    cfg._t0 = time.time()
    _set_thread_cap(cfg.workers)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[cfg.command](cfg, out_dir)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = build_config(args.command, _overrides_from(args),
                           config_path=args.config)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, BudgetExceeded) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BranchcapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: bad JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
