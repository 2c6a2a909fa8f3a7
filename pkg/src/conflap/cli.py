"""Command-line front end: ``spectrum``, ``optimize``, ``verify``, ``report``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .instances import nodal_example, product_example, random_smooth_field
from .manifold import DiscreteManifold, MeshFormatError, build_circle, read_mesh, with_potential
from .optimizer import ClusterError, ConvergenceError, F2, continuation
from .oracle import (
    key_inequality_check,
    maximality_sample_test,
    random_positive_field,
    theta_sweep,
)
from .reports import checked, info, read_report, write_csv, write_report
from .speclib import SolverError, first_eigen_sign, generalized_spectrum
from .variation import continuity_sandwich_check, fd_derivative_check, one_sided_derivatives

__all__ = ["main", "build_manifold", "cmd_spectrum", "cmd_optimize", "cmd_verify", "cmd_report",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_DIVERGED", "EXIT_VERIFY"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIVERGED = 4
EXIT_VERIFY = 5

DEGENERATE_WARNING = "nu([g]) <= 1: maximization problem degenerate"

log = logging.getLogger("conflap")


def build_manifold(cfg: RunConfig) -> DiscreteManifold:
    mc = cfg.manifold
    if mc.generator == "product":
        return product_example(mc.n_circle, mc.n_factor, mc.shift, mc.factor_radius, mc.factor_dim)
    if mc.generator == "circle":
        return with_potential(build_circle(mc.radius, mc.nodes, dim=mc.dim), mc.potential)
    if mc.generator == "nodal":
        return nodal_example(mc.nodes, mc.dim, mc.amplitude)
    try:
        return read_mesh(mc.mesh)
    except (OSError, MeshFormatError) as exc:
        raise ConfigError(f"{mc.mesh}: {exc}") from None


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _warn(warnings_: list, text: str) -> None:
    warnings_.append(text)
    print(f"warning: {text}", file=sys.stderr)


# ---------------------------------------------------------------------------
# spectrum


def cmd_spectrum(cfg: RunConfig) -> tuple[dict, int]:
    """Spectrum of the background metric (``u = 1``)."""
    m = build_manifold(cfg)
    s = cfg.solver
    u = np.ones(m.node_count)
    spec = generalized_spectrum(m, u, count=s.count, cluster_tol=s.cluster_tol,
                                solver_tol=s.solver_tol, method=s.method)
    sign = first_eigen_sign(m, u, cluster_tol=s.cluster_tol, spectrum=spec)
    warnings_: list = []
    lam = spec.eigenvalues
    if spec.nu <= 1:
        _warn(warnings_, DEGENERATE_WARNING)
    near = np.flatnonzero(np.abs(lam) < s.null_tol)
    if near.size:
        _warn(warnings_, f"kernel warning: eigenvalue {lam[near[0]]:.3e} within null_tol="
                         f"{s.null_tol:g} of zero; 0 may belong to the spectrum")
    report = {
        "command": "spectrum",
        "manifold": {"generator": cfg.manifold.generator, "nodes": info(m.node_count),
                     "dim": info(m.dim)},
        "eigenvalues": [checked(l, s.solver_tol, r <= s.solver_tol)
                        for l, r in zip(lam, spec.residuals)],
        "nu": checked(spec.nu, s.null_tol, near.size == 0),
        "cluster2": {"indices": [int(i) for i in spec.cluster2],
                     "size": checked(spec.cluster2.size, s.cluster_tol, spec.cluster2.size >= 1)},
        "lambda1_simple": checked(sign["gap"], s.cluster_tol * abs(lam[0]), sign["simple"]),
        "phi1_constant_sign": sign["constant_sign"],
        "method": spec.method,
        "warnings": warnings_,
        "seed": cfg.seed,
    }
    write_report(_out(cfg) / "spectrum.json", report)
    print(f"lambda = [{', '.join(f'{x:.6g}' for x in lam[:max(4, spec.nu + 1)])}, ...]  "
          f"nu = {spec.nu}  cluster2 size = {spec.cluster2.size}")
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# optimize


def _start(m: DiscreteManifold, cfg: RunConfig) -> np.ndarray:
    a = cfg.optimizer.start_amplitude
    if a == 0 or m.coords is None:
        return np.ones(m.node_count)
    rng = np.random.default_rng(cfg.seed)
    return 1.0 + a * random_smooth_field(m, rng)


def _regularization_checks(per_eps: list, blowup: float) -> dict:
    fresh = [p for p in per_eps if "sup_u" in p]
    if not fresh:
        return {}
    first = fresh[0]
    C = (first["gamma1"] - 1.0) / first["epsilon"]
    out = {"gamma1_growth": [], "int_u_neg_eps_ratio": [], "eps_int_u_neg_eps_N_ratio": []}
    for p in fresh:
        bound = 5.0 * p["epsilon"] * max(C, 0.0)
        out["gamma1_growth"].append(checked(p["gamma1"] - 1.0, bound, p["gamma1"] - 1.0 <= bound))
        for key, name in (("int_u_neg_eps", "int_u_neg_eps_ratio"),
                          ("eps_int_u_neg_eps_N", "eps_int_u_neg_eps_N_ratio")):
            r = p[key] / first[key] if first[key] > 0 else float("inf")
            out[name].append(checked(r, blowup, r <= blowup))
    out["first_eps_constant"] = info(C)
    return out


def cmd_optimize(cfg: RunConfig) -> tuple[dict, int]:
    """Continuation along the configured schedule; exit 4 when Unresolved."""
    m = build_manifold(cfg)
    out = _out(cfg)
    settings = cfg.optimizer_settings()
    o = cfg.optimizer

    def progress(rec):
        log.debug("eps=%g iter=%d F=%.12g res=%.3e step=%.3g", rec["epsilon"], rec["iter"],
                  rec["objective"], rec["residual_l2"], rec["step"])

    u0 = _start(m, cfg)
    rep = continuation(m, u0, schedule=o.schedule, settings=settings,
                       checkpoint_dir=out / "checkpoints", polish_iters=o.polish_iters,
                       polish_tol=o.polish_tol, callback=progress)
    ch = rep.checks
    checks: dict = {"k": info(rep.k)}
    if "identity_error" in ch:
        checks["identity_error"] = checked(ch["identity_error"], o.identity_tol,
                                           ch["identity_error"] <= o.identity_tol)
        checks["nodal_residual"] = checked(ch["nodal_residual"], o.residual_tol,
                                           ch["nodal_residual"] <= o.residual_tol)
        checks["sign_change"] = bool(ch["sign_change"])
    if "sphere_error" in ch:
        checks["sphere_error"] = checked(ch["sphere_error"], o.identity_tol,
                                         ch["sphere_error"] <= o.identity_tol)
        checks["harmonic_residual"] = checked(ch["harmonic_residual"], o.harmonic_tol,
                                              ch["harmonic_residual"] <= o.harmonic_tol)
    slope, beta = ch["limit_residual_slope"], ch["beta_eps_min"]
    checks["limit_residual_slope"] = checked(slope, 0.8 * beta,
                                             math.isfinite(slope) and slope >= 0.8 * beta)
    u = rep.u_final.values
    dist = float(np.max(np.abs(u - u.mean())) / u.mean())
    per_eps = []
    for p in rep.per_epsilon:
        q = {k: (info(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v)
             for k, v in p.items()}
        if "residual_l2" in p:
            q["residual_l2"] = checked(p["residual_l2"], o.eul_tol, p["residual_l2"] <= o.eul_tol)
        q["c"] = [info(x) for x in p.get("c", [])]
        per_eps.append(q)
    report = {
        "command": "optimize",
        "classification": rep.classification,
        "k": info(rep.k),
        "c": [info(x) for x in rep.c],
        "lambda2": info(rep.lambda2),
        "F2": info(rep.F2),
        "F2_background": info(F2(m, np.ones(m.node_count))),
        "distance_from_constant": info(dist),
        "checks": checks,
        "regularization": _regularization_checks(rep.per_epsilon, o.blowup_factor),
        "per_epsilon": per_eps,
        "schedule": list(rep.schedule),
        "notes": rep.notes,
        "seed": cfg.seed,
    }
    write_report(out / "optimize.json", report)
    write_csv(out / "diagnostics.csv", rep.history)
    write_csv(out / "per_epsilon.csv", rep.per_epsilon)
    np.savetxt(out / "u_final.txt", u, fmt="%.17g")
    print(f"classification = {rep.classification}  k = {rep.k}  F2 = {rep.F2:.10g}")
    for n in rep.notes:
        print(f"note: {n}")
    code = EXIT_OK if rep.classification != "Unresolved" else EXIT_DIVERGED
    return report, code


# ---------------------------------------------------------------------------
# verify


def _pair(m: DiscreteManifold, rng: np.random.Generator, amp: float):
    u = np.exp(amp * random_smooth_field(m, rng))
    h = random_smooth_field(m, rng)
    return u, h


def _verify_fd(m: DiscreteManifold, cfg: RunConfig) -> dict:
    v = cfg.verify
    seqs = np.random.SeedSequence([cfg.seed, 1]).spawn(v.fd_pairs)
    pairs, sandwich = [], []
    ok = True
    for i, sq in enumerate(seqs):
        u, h = _pair(m, np.random.default_rng(sq), v.fd_amplitude)
        r = fd_derivative_check(m, u, h, cluster_tol=cfg.solver.cluster_tol)
        good = r.order >= 0.9
        ok &= good
        pairs.append({"index": i, "order": checked(r.order, 0.9, good),
                      "tail_order": info(r.tail_order), "C": info(r.C),
                      "max_deviation": info(r.max_deviation),
                      "right": info(r.right), "left": info(r.left)})
        if i < 2:
            s = continuity_sandwich_check(m, u, h)
            ok &= s.holds
            sandwich.append({"index": i, "holds": s.holds, "strict": s.strict, "C2": info(s.C2),
                             "offending_t": s.offending_t})
    sec = {"pairs": pairs, "sandwich": sandwich}
    base = generalized_spectrum(m, np.ones(m.node_count), count=4,
                                cluster_tol=cfg.solver.cluster_tol)
    if base.cluster2.size >= 2 and m.coords is not None:
        h = np.cos(2.0 * m.coords[:, 0])
        d = one_sided_derivatives(m, np.ones(m.node_count), h, spectrum=base)
        gap = d.left - d.right
        sec["degenerate_split"] = {"right": info(d.right), "left": info(d.left),
                                   "gap": checked(gap, 1e-4, gap > 1e-4)}
        ok &= gap > 1e-4
    sec["pass"] = bool(ok)
    return sec


def _verify_maximality(m: DiscreteManifold, cfg: RunConfig, trials: int) -> dict:
    v = cfg.verify
    r = maximality_sample_test(m, trials=trials, seed=cfg.seed, tol=v.tol,
                               near_cv_tol=v.near_cv_tol, workers=v.workers)
    return {
        "reference_F2": info(r.reference),
        "max_excess": checked(r.max_excess, r.tol, r.max_excess <= r.tol),
        "violations": [{"index": x["index"], "excess": checked(x["excess"], r.tol, False),
                        "u": x["u"]} for x in r.violations],
        "nearest": [{"index": x["index"], "excess": info(x["excess"]),
                     "cv": checked(x["cv"], r.near_cv_tol, x["cv"] < r.near_cv_tol)}
                    for x in r.nearest],
        "trials": info(len(r.trials)),
        "pass": r.passed,
    }


def _verify_key(m: DiscreteManifold, cfg: RunConfig) -> tuple[dict, dict]:
    v = cfg.verify
    seqs = np.random.SeedSequence(cfg.seed).spawn(v.key_samples)
    keys, sweeps = [], []
    for i, sq in enumerate(seqs):
        rng = np.random.default_rng(sq)
        amp = 10.0 ** rng.uniform(-3.0, 0.0)
        u = random_positive_field(m, rng, amp)
        k = key_inequality_check(m, u)
        s = theta_sweep(m, u, tol=v.sweep_tol)
        keys.append({"index": i, "margin": checked(k.margin, 0.0, k.passed)})
        rec = {"index": i, "case": s.case,
               "sweep_margin": checked(s.margin, 0.0, s.margin >= -v.sweep_tol * max(1.0, abs(s.lambda2_tilde))),
               "pass": s.passed}
        if s.closed_form_error is not None:
            rec["closed_form_error"] = checked(s.closed_form_error, v.sweep_tol,
                                               s.closed_form_error <= v.sweep_tol)
        if s.subspace_residual is not None:
            rec["subspace_residual"] = checked(s.subspace_residual, 1e-6, s.subspace_residual <= 1e-6)
        sweeps.append(rec)
    key_fail = [r["index"] for r in keys if not r["margin"]["pass"]]
    sweep_fail = [r["index"] for r in sweeps if not r["pass"]]
    return ({"samples": keys, "failures": key_fail, "pass": not key_fail},
            {"samples": sweeps, "failures": sweep_fail, "pass": not sweep_fail})


def cmd_verify(cfg: RunConfig, trials: Optional[int] = None) -> tuple[dict, int]:
    """Run every verification section; exit 5 naming the failing ones."""
    m = build_manifold(cfg)
    if m.coords is None:
        raise ConfigError("verify needs a generated manifold with node angles")
    sections = {"fd_derivative": _verify_fd(m, cfg)}
    if cfg.manifold.generator == "product":
        sections["maximality"] = _verify_maximality(m, cfg, trials or cfg.verify.trials)
        sections["key_inequality"], sections["theta_sweep"] = _verify_key(m, cfg)
    else:
        skip = {"skipped": "needs the product example", "pass": True}
        sections.update(maximality=dict(skip), key_inequality=dict(skip), theta_sweep=dict(skip))
    failing = sorted(k for k, v in sections.items() if not v["pass"])
    report = {"command": "verify", "sections": sections, "failing": failing, "seed": cfg.seed,
              "pass": not failing}
    write_report(_out(cfg) / "verify.json", report)
    for name in sorted(sections):
        print(f"{name}: {'pass' if sections[name]['pass'] else 'FAIL'}")
    if failing:
        print(f"verification failed: {', '.join(failing)}", file=sys.stderr)
        return report, EXIT_VERIFY
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(cfg: RunConfig) -> tuple[dict, int]:
    """Summarize the reports already present in the output directory."""
    out = Path(cfg.out)
    found = {}
    for name in ("spectrum", "optimize", "verify"):
        p = out / f"{name}.json"
        if p.exists():
            found[name] = read_report(p)
    if not found:
        raise ConfigError(f"{out}: no reports found")
    if "spectrum" in found:
        r = found["spectrum"]
        lam = [e["value"] for e in r["eigenvalues"]]
        print(f"spectrum: nu = {r['nu']['value']}, lambda = {lam[:4]}")
        for w in r.get("warnings", []):
            print(f"  warning: {w}")
    if "optimize" in found:
        r = found["optimize"]
        print(f"optimize: {r['classification']}, k = {r['k']['value']}, F2 = {r['F2']['value']:.10g}")
        for name, c in sorted(r["checks"].items()):
            if isinstance(c, dict) and c.get("pass") is not None:
                print(f"  {name}: {c['value']} (tol {c['tol']}) {'pass' if c['pass'] else 'FAIL'}")
    if "verify" in found:
        r = found["verify"]
        for name, s in sorted(r["sections"].items()):
            print(f"verify {name}: {'pass' if s['pass'] else 'FAIL'}")
    return {"reports": sorted(found)}, EXIT_OK


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conflap",
                                description="Conformal maximization of the second eigenvalue "
                                            "of the conformal Laplacian on discrete manifolds.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("spectrum", "eigenvalues, nu and cluster structure at u = 1"),
                       ("optimize", "epsilon continuation and classification of the limit"),
                       ("verify", "derivative, maximality and inequality checks"),
                       ("report", "summarize reports in the output directory")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path, help="INI configuration file")
        s.add_argument("--seed", type=int, help="override [run] seed")
        s.add_argument("--out", type=Path, help="override [run] out")
        s.add_argument("--trials", type=int, help="override [verify] trials")
    return p


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = str(args.out)
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("--trials must be positive")
            cfg.verify.trials = args.trials
        cmd = {"spectrum": cmd_spectrum, "optimize": cmd_optimize,
               "verify": cmd_verify, "report": cmd_report}[args.command]
        _, code = cmd(cfg)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ClusterError, ConvergenceError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
