"""Command-line entry points.

Exit codes: 0 success, 2 invariant violation (an envelope or admissibility
check failed), 1 any other error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fields import load_gridfield
from .harness import (
    PRESETS,
    Scenario,
    contraction_test,
    convergence_sweep,
    load_scenario,
    particle_count_sweep,
    run_scenario,
)
from .kernels import export_kernel_csv, lambda_convexity_constant
from .transport import DiscreteMeasure, grid_to_measure, w2_circle_exact, w2_exact_lp, w2_sinkhorn


def _load(path_or_preset, seed=None, appendix_a=None):
    sc = load_scenario(path_or_preset)
    raw = dict(sc.config)
    if seed is not None:
        raw["seed"] = seed
    if appendix_a:
        raw["appendix_a_mode"] = True
    return Scenario.from_dict(raw)


def _measure_from_file(path: str, max_atoms: int):
    p = Path(path)
    if p.suffix == ".gf":
        fld = load_gridfield(p)
        vals = np.maximum(fld.values, 0.0)
        from .fields import GridField

        fld = GridField(vals / (vals.sum() * fld.h**fld.d))
        return grid_to_measure(fld, max_atoms=max_atoms)
    with open(p) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: i for i, name in enumerate(header)}
        if "particle_id" not in cols:
            raise ValueError(f"{path}: expected a particle snapshot CSV or a .gf field")
        rows = list(reader)
    times = sorted({float(r[cols["t"]]) for r in rows})
    last = times[-1]
    axes = [c for c in header if c.startswith("x_")]
    pts = np.array(
        [[float(r[cols[ax]]) for ax in axes] for r in rows if float(r[cols["t"]]) == last]
    )
    return DiscreteMeasure(pts)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="torusdpa",
        description="Deterministic particle approximation toolkit on the torus",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", default="runs/out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1,
                       help="recorded in the manifest; runs are single-threaded")
        p.add_argument("--appendix-a-mode", action="store_true",
                       help="drop the viscosity particle term")

    p_sim = sub.add_parser("simulate", help="run a scenario")
    p_sim.add_argument("config", help="scenario file (JSON/YAML) or preset name: "
                       + ", ".join(sorted(PRESETS)))
    add_common(p_sim)

    p_sweep = sub.add_parser("sweep", help="epsilon or particle-count sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--eps", type=float, nargs="+", default=None)
    p_sweep.add_argument("--n-particles", type=int, nargs="+", default=None)
    add_common(p_sweep)

    p_con = sub.add_parser("contraction", help="twin-run lambda-contraction test")
    p_con.add_argument("config")
    p_con.add_argument("--delta", type=float, default=1e-3)
    add_common(p_con)

    p_w2 = sub.add_parser("w2", help="W2 distance between two artifacts")
    p_w2.add_argument("fileA")
    p_w2.add_argument("fileB")
    p_w2.add_argument("--max-atoms", type=int, default=2048)
    p_w2.add_argument("--sinkhorn-reg", type=float, default=None,
                      help="use entropic solver with this regularization")

    p_k = sub.add_parser("kernels", help="kernel tooling")
    k_sub = p_k.add_subparsers(dest="kernels_command", required=True)
    p_ki = k_sub.add_parser("inspect", help="build and validate scenario kernels")
    p_ki.add_argument("config")
    add_common(p_ki)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "simulate":
        sc = _load(args.config, args.seed, args.appendix_a_mode)
        art = run_scenario(sc, args.out, threads=args.threads)
        print(f"wrote {art.manifest_path}")
        if "local_flags" in art.results:
            flags = art.results["local_flags"]
            if flags["energy_increases"] > 0:
                print(f"warning: {flags['energy_increases']} modified-energy increases "
                      f"(worst {flags['worst_increase']:.3e})")
                return 2
        return 0

    if args.command == "sweep":
        sc = _load(args.config, args.seed, args.appendix_a_mode)
        if args.eps:
            rows = convergence_sweep(sc, args.eps, out_dir=args.out)
            for r in rows:
                print(f"eps={r['epsilon']}: W2(nl,local)={r['w2_nl_local']:.6f} "
                      f"W2(particles,local)={r['w2_particle_local']:.6f}")
        elif args.n_particles:
            rows = particle_count_sweep(sc, args.n_particles, out_dir=args.out)
            for r in rows:
                print(f"N={r['N']}: W2(particles,nl)={r['w2_particle_nl']:.6f}")
        else:
            print("error: need --eps or --n-particles", file=sys.stderr)
            return 1
        return 0

    if args.command == "contraction":
        sc = _load(args.config, args.seed, args.appendix_a_mode)
        report = contraction_test(sc, args.delta, out_dir=args.out)
        print(f"lambda={report['lambda']:.6g} W2(0)={report['w2_initial']:.6g} "
              f"max envelope fraction={report['max_envelope_fraction']:.3g} "
              f"pass={report['pass']}")
        if not report["pass"]:
            print(f"envelope violated at t={report['offending_time']}", file=sys.stderr)
            return 2
        return 0

    if args.command == "w2":
        mu = _measure_from_file(args.fileA, args.max_atoms)
        nu = _measure_from_file(args.fileB, args.max_atoms)
        if args.sinkhorn_reg is not None:
            res = w2_sinkhorn(mu, nu, args.sinkhorn_reg)
            print(f"sinkhorn divergence={res.divergence:.10g} "
                  f"entropic cost={res.entropic_cost:.10g}")
        elif mu.d == 1:
            w, _ = w2_circle_exact(mu, nu)
            print(f"W2={w:.10g}")
        else:
            w, _ = w2_exact_lp(mu, nu)
            print(f"W2={w:.10g}")
        return 0

    if args.command == "kernels" and args.kernels_command == "inspect":
        sc = _load(args.config, args.seed, args.appendix_a_mode)
        from .harness import build_scenario_kernels

        kset = build_scenario_kernels(sc)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ok = True
        for label, fam in (("omega", kset.omega), ("omega_tilde", kset.omega_tilde)):
            rep = fam.validate()
            ok = ok and rep["ok"]
            print(f"{label}: scale={fam.scale} width={fam.profile_width:.4g} "
                  f"moment={fam.second_moment_target:.4g} ok={rep['ok']}")
            export_kernel_csv(fam, out / f"{label}.csv")
        if kset.viscosity is not None:
            rep = kset.viscosity.verify_bounds()
            ok = ok and all(bool(v) for k, v in rep.items() if k != "half_reconstruction")
            ok = ok and rep["half_reconstruction"] < 1e-8
            print(f"viscosity: alpha={kset.viscosity.alpha} k={kset.viscosity.k} {rep}")
            export_kernel_csv(kset.viscosity.table, out / "viscosity.csv")
            lam = lambda_convexity_constant(kset)
            print(f"lambda convexity constant: {lam:.6g}")
        export_kernel_csv(kset.W, out / "W_eps.csv")
        print(f"tables exported to {out}")
        return 0 if ok else 2

    return 1


if __name__ == "__main__":
    sys.exit(main())
