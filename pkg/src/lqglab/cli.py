"""Command-line interface.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import fileio
from .fractal import dimension_fit, greedy_cover, inner_half_mask, maximal_packing
from .gaussian_field import sample_gff_exact, sample_gff_spectral, sample_quantum_cone
from .gmc import Region, gmc_from_field, measure_of
from .grids import CellSet, GridSpec, NumericalError, ValidationError
from .harness import ExperimentConfig, emit_plot_data, run_experiment
from .lfpp import build_lfpp_graph, distances_from, metric_ball
from .mating import graph_ball_growth, mated_crt_graph, sample_lr


def _spec_args(p):
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)


def _cell(text: str) -> tuple[int, int]:
    x, y = text.split(",")
    return int(x), int(y)


def _load_graph(args):
    fld = fileio.read_field(args.field)
    return fld, build_lfpp_graph(fld, args.xi, args.eps or fld.spec.delta)


def _regions_from_json(path) -> list[Region]:
    entries = json.loads(open(path).read())
    out = []
    for e in entries:
        shape = e["shape"]
        c = complex(e.get("cx", 0.0), e.get("cy", 0.0))
        if shape == "disk":
            out.append(Region.disk(c, e["r"]))
        elif shape == "square":
            out.append(Region.square(c, e["side"]))
        elif shape == "annulus":
            out.append(Region.annulus(c, e["r_in"], e["r_out"]))
        else:
            raise ValidationError(f"unknown region shape {shape!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lqglab",
                                 description="desk-scale LQG laboratory")
    ap.add_argument("--config", help="flat key=value config file")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--cache-dir", default="field-cache")
    ap.add_argument("--format", choices=("csv", "json"), default="json")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-field", help="sample a GFF or quantum-cone field")
    p.add_argument("--kind", choices=("gff", "cone"), required=True)
    _spec_args(p)
    p.add_argument("--gamma", type=float, default=float("nan"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gmc", help="chaos measure from a cached field")
    p.add_argument("--field", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("lfpp-dist", help="first-passage distances")
    p.add_argument("--field", required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--src", type=_cell, required=True)
    p.add_argument("--dst", type=_cell)
    p.add_argument("--all", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("ball", help="metric ball as an RLE cell-set file")
    p.add_argument("--field", required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--src", type=_cell, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--out", required=True)

    for verb in ("cover", "pack"):
        p = sub.add_parser(verb, help=f"greedy {verb} of the inner half-grid")
        p.add_argument("--field", required=True)
        p.add_argument("--xi", type=float, required=True)
        p.add_argument("--eps", type=float)
        p.add_argument("--cover-eps", type=float, required=True)

    p = sub.add_parser("dimension", help="cover-count dimension of the inner half")
    p.add_argument("--field", required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--eps-list", type=float, nargs="+", required=True)

    p = sub.add_parser("content-ratio", help="covering/mass ratios per region")
    p.add_argument("--field", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--d-gamma", type=float, required=True)
    p.add_argument("--regions", required=True, help="regions.json")
    p.add_argument("--eps-list", type=float, nargs="+", required=True)

    p = sub.add_parser("lr-sample", help="correlated boundary-length pair")
    p.add_argument("--kappa-prime", type=float, required=True)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mated-crt", help="mated planar map from an LR file")
    p.add_argument("--lr", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out", required=True, help="edges CSV")

    p = sub.add_parser("crt-balls", help="graph-ball growth exponent")
    p.add_argument("--lr", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--radii", type=int, nargs="+", required=True)

    p = sub.add_parser("run", help="run a named experiment from --config")
    p.add_argument("--experiment")
    p.add_argument("--out-dir")

    p = sub.add_parser("emit-plot-data", help="plot-ready text files for a record")
    p.add_argument("--record", required=True, help="record.json path")
    p.add_argument("--out-dir", required=True)

    return ap


def _cmd_sample_field(args):
    spec = GridSpec(args.n, args.delta)
    if args.kind == "gff":
        sampler = sample_gff_exact if args.n <= 64 else sample_gff_spectral
        fld = sampler(spec, args.seed)
    else:
        fld = sample_quantum_cone(spec, args.gamma, args.seed)
    fileio.write_field(args.out, fld)
    print(f"wrote {args.out}: kind={fld.kind.name} n={spec.n} seed={args.seed}")


def _cmd_gmc(args):
    fld = fileio.read_field(args.field)
    mu = gmc_from_field(fld, args.gamma, args.eps)
    fileio.write_measure(args.out, mu)
    print(f"wrote {args.out}: total mass {mu.total:.6g}")


def _cmd_lfpp_dist(args):
    _, graph = _load_graph(args)
    df = distances_from(graph, [args.src])
    if args.dst is not None:
        print(f"{df.dist[args.dst]:.10g}")
    elif args.all:
        if not args.out:
            raise ValidationError("--all needs --out for the distance array")
        np.save(args.out, df.dist)
        print(f"wrote {args.out}")
    else:
        raise ValidationError("supply --dst x,y or --all")


def _cmd_ball(args):
    fld, graph = _load_graph(args)
    ball = metric_ball(graph, args.src, args.r)
    fileio.write_cellset(args.out, ball)
    print(f"wrote {args.out}: {ball.size} cells")


def _cmd_cover_pack(args, which):
    fld, graph = _load_graph(args)
    cells = CellSet(fld.spec, inner_half_mask(fld.spec))
    fn = greedy_cover if which == "cover" else maximal_packing
    res = fn(cells, graph, args.cover_eps)
    print(f"{which} count at eps={args.cover_eps}: {res.count}")


def _cmd_dimension(args):
    fld, graph = _load_graph(args)
    cells = CellSet(fld.spec, inner_half_mask(fld.spec))
    counts = [(e, greedy_cover(cells, graph, e).count) for e in args.eps_list]
    fit = dimension_fit(counts)
    print("eps,count")
    for e, c in counts:
        print(f"{e},{c}")
    print(f"slope {fit.slope:.4f} stderr {fit.stderr:.4f} r2 {fit.r2:.4f}")


def _cmd_content_ratio(args):
    from .fractal import content_ratio_experiment

    fld = fileio.read_field(args.field)
    regions = _regions_from_json(args.regions)
    out = content_ratio_experiment(fld, args.gamma, args.d_gamma, regions,
                                   args.eps_list)
    print("eps,region,count,mass,ratio")
    for r in out["rows"]:
        print(f"{r['eps']},{r['region']},{r['count']},{r['mass']:.8g},"
              f"{r['ratio']:.8g}")


def _cmd_lr_sample(args):
    proc = sample_lr(args.kappa_prime, args.a, args.T, args.dt, args.seed)
    fileio.write_lr(args.out, proc)
    print(f"wrote {args.out}: {len(proc.L)} samples")


def _cmd_mated_crt(args):
    proc = fileio.read_lr(args.lr)
    graph = mated_crt_graph(proc, args.eps)
    with open(args.out, "w") as fh:
        fh.write("i,j\n")
        for i, j in graph.edges:
            fh.write(f"{i},{j}\n")
    print(f"wrote {args.out}: {graph.num_cells} cells, {len(graph.edges)} edges")


def _cmd_crt_balls(args):
    proc = fileio.read_lr(args.lr)
    graph = mated_crt_graph(proc, args.eps)
    m = graph.num_cells
    fit = graph_ball_growth(graph, [m // 4, m // 2, 3 * m // 4], args.radii)
    print(f"growth exponent {fit.slope:.4f} stderr {fit.stderr:.4f}")


def _cmd_run(args):
    overrides = {"experiment": args.experiment, "output_dir": args.out_dir,
                 "parallelism": args.jobs if args.jobs != 1 else None,
                 "cache_dir": args.cache_dir}
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
    else:
        if not args.experiment:
            raise ValidationError("run needs --config or --experiment")
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items()
                                  if v is not None})
    record = run_experiment(cfg)
    print(record.to_json())


def _cmd_emit_plot_data(args):
    from .harness import ResultRecord

    payload = json.loads(open(args.record).read())
    import csv as _csv
    rows = []
    samples = str(args.record).replace("record.json", "samples.csv")
    try:
        with open(samples) as fh:
            for row in _csv.DictReader(fh):
                rows.append({k: _maybe_num(v) for k, v in row.items()})
    except FileNotFoundError:
        pass
    record = ResultRecord(payload["experiment"], payload["params"], rows,
                          payload["aggregate"], tuple(payload["seed_list"]),
                          payload["code_version"], payload["wall_clock"])
    for path in emit_plot_data(record, args.out_dir):
        print(f"wrote {path}")


def _maybe_num(v: str):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "sample-field": _cmd_sample_field,
        "gmc": _cmd_gmc,
        "lfpp-dist": _cmd_lfpp_dist,
        "ball": _cmd_ball,
        "cover": lambda a: _cmd_cover_pack(a, "cover"),
        "pack": lambda a: _cmd_cover_pack(a, "pack"),
        "dimension": _cmd_dimension,
        "content-ratio": _cmd_content_ratio,
        "lr-sample": _cmd_lr_sample,
        "mated-crt": _cmd_mated_crt,
        "crt-balls": _cmd_crt_balls,
        "run": _cmd_run,
        "emit-plot-data": _cmd_emit_plot_data,
    }
    try:
        commands[args.command](args)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError, ArithmeticError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
