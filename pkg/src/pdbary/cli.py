"""Command-line interface: distances, barycenters, clustering, synthetic
ensembles, diagram extraction and mean fields.

Every command writes an optional JSON run report capturing the exact
configuration (seed, threads, gamma, alpha, time limit) so a run can be
reproduced bit-identically.  Time budgets apply to the optimization phase
only; file I/O and diagram extraction are excluded.

Exit codes: 0 success, 2 validation error, 3 runtime failure.  Every flag
can also be supplied through an environment variable with the ``PDBARY_``
prefix (e.g. ``PDBARY_THREADS=8`` for ``--threads``).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import __version__
from .assignment import (
    MunkresSizeError,
    auction_until_converged,
    munkres_assignment,
)
from .barycenter import (
    BarycenterConfig,
    frechet_energy,
    progressive_barycenter,
    reference_barycenter,
    write_trace,
)
from .clustering import ClusteringConfig, cluster_diagrams
from .diagram import (
    DiagramFormatError,
    MetricParams,
    PairType,
    read_diagram,
    read_manifest,
    write_diagram,
    write_manifest,
)
from .fields import (
    EnsembleSpec,
    GaussianPattern,
    ScalarField,
    extremum_diagram,
    generate_ensemble,
    pointwise_mean,
    read_field,
    read_field_csv,
    write_field,
)

ENV_PREFIX = "PDBARY_"


def _env(name: str, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise SystemExit(f"invalid value {raw!r} for {ENV_PREFIX}{name}")


def _metric(args) -> MetricParams:
    return MetricParams(q=getattr(args, "q", 2.0), alpha=args.alpha)


def _report(args, command: str, config: dict, outputs: list, metrics: dict):
    if not getattr(args, "report", None):
        return
    payload = {
        "command": command,
        "version": __version__,
        "config": config,
        "outputs": outputs,
        "metrics": metrics,
    }
    with open(args.report, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)
        fh.write("\n")


def _load_field(path: str, label: str = "") -> ScalarField:
    if path.endswith(".csv"):
        return read_field_csv(path, label=label)
    return read_field(path, label=label)


def _load_field_manifest(path: str) -> list[ScalarField]:
    with open(path) as fh:
        payload = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    fields = []
    for entry in payload["members"]:
        p = entry["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        fields.append(_load_field(p, label=entry.get("label", "")))
    return fields


# -- commands --------------------------------------------------------------


def cmd_distance(args) -> int:
    Da = read_diagram(args.diagram_a)
    Db = read_diagram(args.diagram_b)
    params = _metric(args)
    t0 = time.perf_counter()
    if args.solver == "munkres":
        res = munkres_assignment(Da, Db, params)
    else:
        res = auction_until_converged(Da, Db, params, gamma=args.gamma)
    wall = time.perf_counter() - t0
    print(f"{res.distance:.17g}")
    outputs = []
    if args.matching:
        with open(args.matching, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bidder_index", "object_index"])
            for i, j in enumerate(res.mapping):
                w.writerow([i, int(j)])
        outputs.append(args.matching)
    _report(args, "distance",
            {"solver": args.solver, "gamma": args.gamma,
             "alpha": args.alpha, "q": args.q,
             "diagram_a": args.diagram_a, "diagram_b": args.diagram_b},
            outputs,
            {"distance": res.distance, "cost": res.cost,
             "wall_seconds": wall})
    return 0


def cmd_barycenter(args) -> int:
    F = read_manifest(args.manifest)
    params = _metric(args)
    t0 = time.perf_counter()
    trace = []
    if args.algo == "progressive":
        config = BarycenterConfig(
            time_limit=args.time_limit, threads=args.threads, seed=args.seed,
            gamma_for_energy=args.gamma)
        B, trace = progressive_barycenter(F, params, config)
    else:
        B = reference_barycenter(F, params, solver=args.solver,
                                 seed=args.seed, gamma=args.gamma)
    wall = time.perf_counter() - t0
    write_diagram(B, args.out)
    outputs = [args.out]
    if args.trace:
        write_trace(args.trace, trace)
        outputs.append(args.trace)
    energy = frechet_energy(B, F, params, gamma=args.gamma)
    print(f"barycenter: {len(B)} points, energy {energy:.17g}, "
          f"{wall:.3f}s")
    _report(args, "barycenter",
            {"algo": args.algo, "solver": args.solver,
             "time_limit": args.time_limit, "alpha": args.alpha,
             "gamma": args.gamma, "threads": args.threads,
             "seed": args.seed, "manifest": args.manifest},
            outputs,
            {"energy": energy, "points": len(B), "wall_seconds": wall,
             "relaxations": len(trace)})
    return 0


def cmd_cluster(args) -> int:
    F = read_manifest(args.manifest)
    params = _metric(args)
    config = ClusteringConfig(
        k=args.k, time_limit=args.time_limit, seed=args.seed,
        gamma_assign=args.gamma, threads=args.threads)
    t0 = time.perf_counter()
    labels, centroids, trace = cluster_diagrams(F, params, config)
    wall = time.perf_counter() - t0
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    entries = []
    for j, C in enumerate(centroids):
        path = os.path.join(args.out_dir, f"centroid_{j}.csv")
        write_diagram(C, path)
        outputs.append(path)
        entries.append((C.label, f"centroid_{j}.csv"))
    write_manifest(os.path.join(args.out_dir, "centroids.json"), entries)
    energies = [
        sum(auction_until_converged(F[m], centroids[j], params,
                                    args.gamma).cost
            for m in range(len(F)) if labels[m] == j)
        for j in range(args.k)
    ]
    report_path = os.path.join(args.out_dir, "clusters.json")
    with open(report_path, "w") as fh:
        json.dump({
            "labels": [int(x) for x in labels],
            "members": [D.label for D in F],
            "cluster_energies": energies,
            "iterations": len(trace),
        }, fh, indent=2)
        fh.write("\n")
    outputs.append(report_path)
    print(f"clusters: {[int(x) for x in labels]} "
          f"(total energy {sum(energies):.17g}, {wall:.3f}s)")
    _report(args, "cluster",
            {"k": args.k, "time_limit": args.time_limit,
             "alpha": args.alpha, "gamma": args.gamma,
             "threads": args.threads, "seed": args.seed,
             "manifest": args.manifest},
            outputs,
            {"cluster_energies": energies, "total_energy": sum(energies),
             "wall_seconds": wall, "iterations": len(trace)})
    return 0


def _ensemble_spec_from_json(path: str) -> EnsembleSpec:
    with open(path) as fh:
        raw = json.load(fh)
    patterns = tuple(
        GaussianPattern(
            centers=tuple(tuple(c) for c in p["centers"]),
            amplitudes=tuple(p["amplitudes"]),
            widths=tuple(p["widths"]),
            center_jitter=p.get("center_jitter", 0.0),
        )
        for p in raw["patterns"]
    )
    return EnsembleSpec(
        member_count=raw["member_count"],
        patterns=patterns,
        noise_amplitude=raw.get("noise_amplitude", 0.0),
        seed=raw.get("seed", 0),
        dims=tuple(raw.get("dims", (64, 64))),
    )


def cmd_synth(args) -> int:
    spec = _ensemble_spec_from_json(args.spec)
    fields = generate_ensemble(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    entries = []
    outputs = []
    for f in fields:
        path = os.path.join(args.out_dir, f.label + ".pdfb")
        write_field(f, path)
        entries.append((f.label, f.label + ".pdfb"))
        outputs.append(path)
    manifest = os.path.join(args.out_dir, "fields.json")
    with open(manifest, "w") as fh:
        json.dump({"members": [{"label": lab, "path": p}
                               for lab, p in entries]}, fh, indent=2)
        fh.write("\n")
    outputs.append(manifest)
    print(f"wrote {len(fields)} members to {args.out_dir}")
    _report(args, "synth", {"spec": args.spec}, outputs,
            {"members": len(fields)})
    return 0


def cmd_extract(args) -> int:
    f = _load_field(args.field)
    D = extremum_diagram(f, PairType(args.pair_type))
    write_diagram(D, args.out)
    print(f"{len(D)} pairs -> {args.out}")
    _report(args, "extract",
            {"field": args.field, "pair_type": args.pair_type},
            [args.out], {"pairs": len(D)})
    return 0


def cmd_meanfield(args) -> int:
    fields = _load_field_manifest(args.manifest)
    mean = pointwise_mean(fields)
    write_field(mean, args.out)
    print(f"mean of {len(fields)} fields -> {args.out}")
    _report(args, "meanfield", {"manifest": args.manifest},
            [args.out], {"members": len(fields)})
    return 0


# -- argument parsing ------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, threads=False, seed=False,
                time_limit=False):
    p.add_argument("--alpha", type=float,
                   default=_env("alpha", 0.0, float),
                   help="geometric lifting weight in [0, 1)")
    p.add_argument("--gamma", type=float,
                   default=_env("gamma", 0.01, float),
                   help="relative accuracy of converged auction distances")
    p.add_argument("--report", default=_env("report", None),
                   help="write a JSON run report here")
    if threads:
        p.add_argument("--threads", type=int,
                       default=_env("threads", 1, int))
    if seed:
        p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    if time_limit:
        p.add_argument("--time-limit", type=float,
                       default=_env("time_limit", None, float),
                       help="optimization budget in seconds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pdbary",
        description="Wasserstein distances, barycenters and clusters of "
                    "persistence diagrams")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", help="Wasserstein distance between two "
                                        "diagram files")
    p.add_argument("diagram_a")
    p.add_argument("diagram_b")
    p.add_argument("--solver", choices=["auction", "munkres"],
                   default=_env("solver", "auction"))
    p.add_argument("--q", type=float, default=_env("q", 2.0, float))
    p.add_argument("--matching", default=None,
                   help="write the optimal matching as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("barycenter", help="Wasserstein barycenter of an "
                                          "ensemble manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--algo", choices=["progressive", "reference"],
                   default=_env("algo", "progressive"))
    p.add_argument("--solver", choices=["auction", "munkres"],
                   default=_env("solver", "auction"),
                   help="assignment solver for --algo reference")
    p.add_argument("--trace", default=None,
                   help="write the energy/time trace as CSV")
    _add_common(p, threads=True, seed=True, time_limit=True)
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("cluster", help="progressive k-means over an "
                                       "ensemble manifest")
    p.add_argument("manifest")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p, threads=True, seed=True, time_limit=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("synth", help="generate a synthetic field ensemble")
    p.add_argument("spec", help="JSON ensemble description")
    p.add_argument("out_dir")
    p.add_argument("--report", default=_env("report", None))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extremum persistence diagram of a "
                                       "scalar field")
    p.add_argument("field", help=".pdfb binary or 2D CSV grid")
    p.add_argument("--pair-type", choices=["minSaddle", "saddleMax"],
                   default=_env("pair_type", "saddleMax"))
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=_env("report", None))
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("meanfield", help="pointwise mean of a field "
                                         "ensemble manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=_env("report", None))
    p.set_defaults(func=cmd_meanfield)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (DiagramFormatError, MunkresSizeError, FileNotFoundError,
            IsADirectoryError, ValueError, KeyError, json.JSONDecodeError
            ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
