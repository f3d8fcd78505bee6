"""Configuration-driven command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  Diagnostics go to standard error; machine-readable output
goes to report files (or standard output for mesh-dump).  The
CALDERON_THREADS environment variable caps worker threads (0 = auto).
"""

import argparse
import io
import sys
import time

import numpy as np

from . import experiments, fem, misfit, report
from .conductivity import linf_distance
from .config import load_config, serialize_config
from .errors import CalderonError, ConfigError
from .geometry import build_augmented_mesh, dump_mesh, pole_quadrature

_SUBCOMMANDS = ("forward", "green", "misfit", "dn-norm", "stability-sweep",
                "scaling", "asymptotics", "smallness", "reconstruct",
                "mesh-dump")


def _parser():
    ap = argparse.ArgumentParser(
        prog="calderon-misfit",
        description="misfit-functional stability probes on layered domains")
    ap.add_argument("subcommand", choices=_SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="run configuration file")
    ap.add_argument("--out", default="./out", help="output directory")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the experiment seed")
    return ap


def _need_conductivities(cfg, count):
    names = sorted(cfg.conductivities)
    if len(names) < count:
        raise ConfigError(
            f"this subcommand needs {count} [conductivity.*] sections, "
            f"found {len(names)}")
    return [cfg.conductivities[n] for n in names[:count]]


def _nodal_csv(mesh, values):
    rows = [("vertex_index", "x", "y", "z", "value")]
    for i, (p, v) in enumerate(zip(mesh.vertices, values)):
        rows.append((i, float(p[0]), float(p[1]), float(p[2]), float(v)))
    return rows


def _run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.experiment["seed"] = args.seed
    exp = cfg.experiment
    sub = args.subcommand
    formats = cfg.output_formats

    if sub == "mesh-dump":
        mesh = build_augmented_mesh(cfg.spec, cfg.resolution)
        buf = io.StringIO()
        dump_mesh(mesh, buf)
        sys.stdout.write(buf.getvalue())
        return 0

    t0 = time.time()
    if sub == "forward":
        (c,) = _need_conductivities(cfg, 1)
        mesh = build_augmented_mesh(cfg.spec, cfg.resolution)
        sysm = fem.assemble(mesh, c)
        g = cfg.forward.get("g_affine", (0.0, 1.0, 0.0, 0.0))
        u = fem.solve_dirichlet(
            sysm, lambda P: g[0] + P @ np.asarray(g[1:]))
        payload = {"schema_version": 1, "subcommand": sub,
                   "energy": fem.discrete_energy(sysm, u),
                   "resolution": cfg.resolution,
                   "n_vertices": mesh.n_vertices}
        report.write_report(args.out, "forward", payload, formats,
                            csv_rows=_nodal_csv(mesh, u))
    elif sub == "green":
        (c,) = _need_conductivities(cfg, 1)
        mesh = build_augmented_mesh(cfg.spec, cfg.resolution)
        sysm = fem.assemble(mesh, c)
        dy = pole_quadrature(cfg.dy_box, cfg.per_axis, cfg.spec)
        gf = fem.green(sysm, dy.nodes[0])
        interior = mesh.interior_vertices()
        d = np.linalg.norm(mesh.vertices[interior] - gf.pole, axis=1)
        far = interior[d >= 2.0 * mesh.step]
        payload = {"schema_version": 1, "subcommand": sub,
                   "pole": [float(v) for v in gf.pole],
                   "min_far_value": float(gf.g[far].min()),
                   "boundary_max_abs":
                       float(np.abs(gf.g[mesh.boundary_vertices]).max()),
                   "resolution": cfg.resolution}
        report.write_report(args.out, "green", payload, formats,
                            csv_rows=_nodal_csv(mesh, gf.g))
    elif sub == "misfit":
        c1, c2 = _need_conductivities(cfg, 2)
        mesh = build_augmented_mesh(cfg.spec, cfg.resolution)
        dy = pole_quadrature(cfg.dy_box, cfg.per_axis, cfg.spec)
        dz = pole_quadrature(cfg.dz_box, cfg.per_axis, cfg.spec)
        j, rep = misfit.misfit_J(c1, c2, mesh, dy, dz)
        payload = rep.to_dict()
        payload["subcommand"] = sub
        payload["config_echo"] = cfg.raw
        report.write_report(args.out, "misfit", payload, formats,
                            csv_rows=rep.to_csv_rows())
    elif sub == "dn-norm":
        c1, c2 = _need_conductivities(cfg, 2)
        mesh = build_augmented_mesh(cfg.spec, cfg.resolution)
        res = misfit.dn_norm_diff(c1, c2, mesh)
        dist = linf_distance(c1, c2, mesh)
        payload = {"schema_version": 1, "subcommand": sub,
                   "dn_norm": res.value, "converged": res.converged,
                   "iterations": res.iterations, "E": dist["E"],
                   "sigma_dist": dist["sigma_dist"]}
        report.write_report(args.out, "dn_norm", payload, formats)
    elif sub == "stability-sweep":
        rep = experiments.stability_sweep(
            cfg.spec, cfg.resolution, exp.get("n_pairs", 4),
            exp.get("seed", 0), dy_box=cfg.dy_box, dz_box=cfg.dz_box,
            per_axis=cfg.per_axis, gamma_bar=cfg.bounds["gamma_bar"])
        report.write_report(args.out, "stability_sweep", rep.to_dict(),
                            formats, csv_rows=rep.to_csv_rows())
    elif sub == "scaling":
        c1, *_ = _need_conductivities(cfg, 1)
        setup = experiments.make_setup(cfg.spec, cfg.resolution,
                                       cfg.dy_box, cfg.dz_box,
                                       cfg.per_axis)
        delta = exp.get("delta_patch")
        if delta is None:
            raise ConfigError("[experiment] delta_patch = m s Sx Sy Sz "
                              "is required for scaling")
        from .conductivity import AffinePatch
        deltas = [AffinePatch(int(delta[0]), delta[1], delta[2:5])]
        rep = experiments.scaling_probe(
            setup, c1, deltas, exp.get("t_grid", (0.02, 0.04, 0.08)))
        report.write_report(args.out, "scaling", rep.to_dict(), formats)
    elif sub == "asymptotics":
        (c,) = _need_conductivities(cfg, 1)
        rep = experiments.asymptotics_probe(
            cfg.spec, c, exp.get("k", 1),
            exp.get("radii", (0.4, 0.2, 0.1)), cfg.resolution)
        report.write_report(args.out, "asymptotics", rep.to_dict(), formats)
    elif sub == "smallness":
        c1, c2 = _need_conductivities(cfg, 2)
        setup = experiments.make_setup(cfg.spec, cfg.resolution,
                                       cfg.dy_box, cfg.dz_box,
                                       cfg.per_axis)
        rep = experiments.smallness_probe(setup, c1, c2, exp.get("k", 1),
                                          exp.get("r", 0.05))
        report.write_report(args.out, "smallness", rep.to_dict(), formats)
    elif sub == "reconstruct":
        names = dict(cfg.conductivities)
        t_name = exp.get("conductivity_true", "true")
        i_name = exp.get("conductivity_init", "init")
        if t_name not in names or i_name not in names:
            raise ConfigError(
                f"reconstruct needs [conductivity.{t_name}] and "
                f"[conductivity.{i_name}] sections")
        setup = experiments.make_setup(cfg.spec, cfg.resolution,
                                       cfg.dy_box, cfg.dz_box,
                                       cfg.per_axis)
        rep = experiments.reconstruct(setup, names[t_name], names[i_name],
                                      max_iter=exp.get("max_iter", 20),
                                      tol=exp.get("tol", 1e-8),
                                      gamma_bar=cfg.bounds["gamma_bar"])
        report.write_report(args.out, "reconstruct", rep.to_dict(), formats,
                            csv_rows=rep.to_csv_rows())
    print(f"{sub}: done in {time.time() - t0:.2f}s", file=sys.stderr)
    return 0


def run(argv):
    """Entry point returning the exit code (0/2/3/4)."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except (CalderonError, AssertionError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
