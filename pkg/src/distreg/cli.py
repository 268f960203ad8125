"""Command-line experiment runner.

Exit codes: 0 success, 1 ratio above 1+eps, 2 invalid parameters,
3 I/O or parse failure, 4 SketchFailure after retries, 5 other protocol errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import hardgen
from .errors import BadParam, DistregError, SketchFailure
from .instances import random_instance, read_instance, write_instance
from .netsim import derive_seed, run_with_retries, shard
from .protocol_l2 import L2Config, run_l2
from .protocol_lp import LpConfig, run_lp

HEADER = ["seed", "ratio", "objective", "oracle", "bits_total", "bits_sketch",
          "bits_qr", "bits_iter", "bits_sample", "retries", "ms"]
EXIT_RATIO, EXIT_PARAM, EXIT_IO, EXIT_SKETCH, EXIT_PROTOCOL = 1, 2, 3, 4, 5
RETRIES = 3
L2_EPS, LP_EPS = 0.1, 0.25


class ConfigError(Exception):
    pass


class InstanceError(Exception):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config(path):
    """``key = value`` lines; '#' starts a comment."""
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------- arguments

def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="protocol seed")
    p.add_argument("--instance-seed", type=int, default=None,
                   help="instance seed (defaults to --seed)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--retries", type=int, default=RETRIES)
    p.add_argument("--out", default=None, help="CSV report (appended)")
    p.add_argument("--transcript", default=None, help="write the transcript here")


def _add_l2(p):
    p.add_argument("--eps", type=float, default=None, help="default 0.1 (l2), 0.25 (lp)")
    p.add_argument("--m1", type=int, default=None)
    p.add_argument("--m2", type=int, default=None)
    p.add_argument("--m3", type=int, default=None)
    p.add_argument("--gd-iters", type=int, default=None)
    p.add_argument("--grid-exponent", type=float, default=3)


def _add_lp(p):
    p.add_argument("--p", type=float, default=1.5)
    p.add_argument("--r", type=float, default=None)
    if not any(a.dest == "eps" for a in p._actions):
        p.add_argument("--eps", type=float, default=None, help="default 0.25")
    p.add_argument("--mt", type=int, default=None)
    p.add_argument("--beta", type=float, default=None, help="sampling constant c_q")
    p.add_argument("--lewis-iters", type=int, default=None)
    p.add_argument("--presample", type=float, default=None, help="uniform presample rate gamma")
    if not any(a.dest == "grid_exponent" for a in p._actions):
        p.add_argument("--grid-exponent", type=float, default=3)


def _add_shape(p, n=None, d=None, s=None):
    p.add_argument("--n", type=int, default=n, required=n is None)
    p.add_argument("--d", type=int, default=d, required=d is None)
    p.add_argument("--s", type=int, default=s, required=s is None)


def build_parser():
    parser = argparse.ArgumentParser(prog="distreg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="key = value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write an instance directory")
    g.add_argument("kind", choices=["random", "gap", "padded"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--s", type=int, default=None)
    g.add_argument("--t", type=int, default=1)
    g.add_argument("--sign", choices=["positive", "negative"], default="positive")
    g.add_argument("--c1", type=float, default=hardgen.C1)
    g.add_argument("--c2", type=float, default=hardgen.C2)
    g.add_argument("--magnitude", type=int, default=10)
    g.add_argument("--noise", type=float, default=20.0)
    g.add_argument("--consistent", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="instance directory")

    r = sub.add_parser("run", help="run a protocol on an instance directory")
    r.add_argument("protocol", choices=["l2", "lp"])
    r.add_argument("--instance", required=True)
    _add_common(r)
    _add_l2(r)
    _add_lp(r)

    r2 = sub.add_parser("run-l2", help="generate a random instance and run the l2 protocol")
    _add_shape(r2)
    _add_common(r2)
    _add_l2(r2)

    rp = sub.add_parser("run-lp", help="generate a random instance and run the lp protocol")
    _add_shape(rp)
    _add_common(rp)
    _add_lp(rp)

    sw = sub.add_parser("sweep", help="sweep one axis and fit log-log slopes")
    sw.add_argument("protocol", choices=["l2", "lp"])
    sw.add_argument("--axis", choices=["s", "d", "eps"], required=True)
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    sw.add_argument("--seeds", default="0", help="comma-separated protocol seeds")
    sw.add_argument("--jobs", type=int, default=1, help="parallel (value, seed) cells")
    _add_shape(sw, n=2000, d=4, s=4)
    _add_common(sw)
    _add_l2(sw)
    _add_lp(sw)
    parser.set_defaults(_subparsers=sub.choices)
    return parser


def _apply_config(parser, argv):
    """Parse argv with the config file's values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    subparsers = parser._defaults["_subparsers"]
    command = next((tok for tok in rest if tok in subparsers), None)
    if command is None:
        return parser.parse_args(argv)
    subparser = subparsers[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in read_config(known.config).items():
        act = actions.get(key)
        if act is None or key == "help" or not act.option_strings:
            raise ConfigError(f"unknown config key {key!r} for '{command}'")
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = _bool(value)
        else:
            defaults[key] = value
        act.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------- execution

def _instance_seed(args):
    return args.seed if args.instance_seed is None else args.instance_seed


def l2_config(args, **over):
    eps = L2_EPS if args.eps is None else args.eps
    kw = dict(eps=eps, m1=args.m1, m2=args.m2, m3=args.m3, gd_iters=args.gd_iters,
              grid_exponent=args.grid_exponent, seed=args.seed, workers=args.workers)
    kw.update(over)
    return L2Config(**kw)


def lp_config(args, **over):
    eps = LP_EPS if args.eps is None else args.eps
    kw = dict(p=args.p, r=args.r, eps=eps, m_t=args.mt, lewis_iters=args.lewis_iters,
              presample=args.presample, grid_exponent=args.grid_exponent, seed=args.seed,
              workers=args.workers)
    if args.beta is not None:
        kw["c_q"] = args.beta
    kw.update(over)
    return LpConfig(**kw)


def stage_columns(protocol, result):
    """``(sketch, qr, iter, sample)`` bits for the CSV."""
    sb = result.stage_bits
    if protocol == "l2":
        return sb("sketch"), sb("qr"), sb("iter"), 0
    return (sb("lewis_sketch"), sb("lewis_qr"), sb("lewis_probe") + sb("lewis_weights"),
            sb("sample"))


def report_row(protocol, seed, result, retries, ms):
    sketch_b, qr_b, iter_b, sample_b = stage_columns(protocol, result)
    total = sketch_b + qr_b + iter_b + sample_b
    if total != result.bits_protocol:
        raise AssertionError("stage columns do not sum to the protocol total")
    return {"seed": seed, "ratio": repr(float(result.ratio_vs_oracle)),
            "objective": repr(float(result.objective)),
            "oracle": repr(float(result.oracle_objective)), "bits_total": total,
            "bits_sketch": sketch_b, "bits_qr": qr_b, "bits_iter": iter_b,
            "bits_sample": sample_b, "retries": retries, "ms": int(round(ms))}


def execute(protocol, shards, cfg, retries=RETRIES):
    run = run_l2 if protocol == "l2" else run_lp
    t0 = time.perf_counter()
    result, used = run_with_retries(run, shards, cfg, retries)
    return result, used, 1000 * (time.perf_counter() - t0)


def write_rows(path, rows, header=HEADER):
    if path is None:
        w = csv.DictWriter(sys.stdout, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerows(rows)


def echo_config(path, args):
    if path is None:
        return
    keys = sorted(k for k in vars(args) if not k.startswith("_"))
    lines = [f"{k} = {getattr(args, k)}" for k in keys if getattr(args, k) is not None]
    Path(str(path) + ".config").write_text("\n".join(lines) + "\n")


def _finish_run(protocol, shards, cfg, args):
    result, used, ms = execute(protocol, shards, cfg, args.retries)
    row = report_row(protocol, args.seed, result, used, ms)
    write_rows(args.out, [row])
    echo_config(args.out, args)
    if args.transcript:
        Path(args.transcript).write_text(result.transcript.serialize())
    return 0 if result.ratio_vs_oracle <= 1 + cfg.eps else EXIT_RATIO


def cmd_gen(args):
    if args.kind == "random":
        if args.s is None or args.d < 1:
            raise BadParam("random instances need --s and --d >= 1")
        a, b, x = random_instance(args.n, args.d, args.seed, magnitude=args.magnitude,
                                  noise=args.noise, consistent=args.consistent)
        shards = shard(a, b, args.s, args.seed)
        write_instance(args.out, shards, {"kind": "random", "seed": args.seed})
        print(f"random n={args.n} d={args.d} s={args.s} planted_x={np.round(x, 6).tolist()}")
        return 0
    blocks = [hardgen.gen_gap(args.n, args.t, args.sign, args.c1, args.c2,
                              derive_seed(args.seed, j) if args.kind == "padded" else args.seed)
              for j in range(args.d if args.kind == "padded" else 1)]
    if args.kind == "gap" and args.d != 1:
        raise BadParam("gap instances have d = 1; use 'padded' for d > 1")
    inst = hardgen.pad(blocks)
    shards = inst.shards
    if args.s is not None and args.s != shards.s:
        shards = shard(inst.a, inst.b, args.s, args.seed)
    write_instance(args.out, shards, {"kind": args.kind, "seed": args.seed}, blocks)
    deltas = " ".join(str(g.delta) for g in blocks)
    print(f"{args.kind} n={args.n} t={args.t} d={len(blocks)} s={shards.s} delta={deltas}")
    return 0


def load_instance(path):
    try:
        return read_instance(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InstanceError(f"cannot read instance {path}: {exc}") from exc


def cmd_run(args):
    shards, _ = load_instance(args.instance)
    cfg = l2_config(args) if args.protocol == "l2" else lp_config(args)
    return _finish_run(args.protocol, shards, cfg, args)


def cmd_run_l2(args):
    a, b, _ = random_instance(args.n, args.d, _instance_seed(args))
    return _finish_run("l2", shard(a, b, args.s, _instance_seed(args)), l2_config(args), args)


def cmd_run_lp(args):
    a, b, _ = random_instance(args.n, args.d, _instance_seed(args))
    return _finish_run("lp", shard(a, b, args.s, _instance_seed(args)), lp_config(args), args)


def _parse_values(text, axis):
    conv = float if axis == "eps" else int
    vals = [conv(v) for v in text.split(",") if v.strip()]
    if len(vals) < 3 or len(set(vals)) < 3:
        raise BadParam("a sweep needs at least 3 distinct axis values")
    return vals


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def cmd_sweep(args):
    values = _parse_values(args.values, args.axis)
    seeds = [int(v) for v in args.seeds.split(",") if v.strip()]
    inst_seed = _instance_seed(args)
    # the eps axis keeps T fixed so iteration bits isolate the 1/eps term
    base_iters = args.gd_iters or L2Config(eps=L2_EPS if args.eps is None else args.eps).iterations()

    def cell(value, seed):
        n, d, s = args.n, args.d, args.s
        over = {"seed": seed}
        if args.axis == "s":
            s = value
        elif args.axis == "d":
            d = value
        else:
            over["eps"] = value
            if args.protocol == "l2":
                over["gd_iters"] = base_iters
        a, b, _ = random_instance(n, d, inst_seed)
        shards = shard(a, b, s, inst_seed)
        cfg = l2_config(args, **over) if args.protocol == "l2" else lp_config(args, **over)
        result, used, ms = execute(args.protocol, shards, cfg, args.retries)
        row = report_row(args.protocol, seed, result, used, ms)
        return {"value": value, **row}

    cells = [(v, sd) for v in values for sd in seeds]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(lambda c: cell(*c), cells))
    else:
        rows = [cell(*c) for c in cells]
    write_rows(args.out, rows, ["value"] + HEADER)

    xs = np.array([1 / v if args.axis == "eps" else v for v in values], dtype=float)
    mean = {key: np.array([np.mean([r[key] for r in rows if r["value"] == v]) for v in values])
            for key in ("bits_total", "bits_iter", "bits_sketch")}
    summary = {"axis": args.axis, "regressor": "1/eps" if args.axis == "eps" else args.axis,
               "values": values, "seeds": seeds}
    for key, ys in mean.items():
        if np.all(ys > 0):
            summary[f"slope_{key}"] = loglog_slope(xs, ys)
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(str(args.out) + ".summary.json").write_text(text + "\n")
        echo_config(args.out, args)
    else:
        print(text)
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "run-l2": cmd_run_l2, "run-lp": cmd_run_lp,
            "sweep": cmd_sweep}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"distreg: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except OSError as exc:
        print(f"distreg: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_PARAM
    try:
        return COMMANDS[args.command](args)
    except (BadParam, ValueError) as exc:
        print(f"distreg: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (InstanceError, OSError) as exc:
        print(f"distreg: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except SketchFailure as exc:
        print(f"distreg: sketch failure after retries: {exc}", file=sys.stderr)
        return EXIT_SKETCH
    except DistregError as exc:
        print(f"distreg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
