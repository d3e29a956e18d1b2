"""``rcigrid`` command line: model | rci | simulate | plot.

Exit codes: 0 success/converged, 1 usage or I/O error, 2 empty failure,
3 inconclusive, 4 missing invariant sets for ``rmpc``.
"""

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .adversary import (ClosedLoop, SimConfig, read_trajectories, run_experiment,
                        write_disturbances, write_trajectories)
from .controllers import CONTROLLERS, CostSpec
from .invariant import (CONVERGED, EMPTY_FAILURE, INCONCLUSIVE, IterationConfig,
                        centralized_rci_network, distributed_rci_network, network_sets)
from .network import (NetworkSpecError, SingularBusError, SingularNetworkError,
                      build_model, load_network, theorem1_step_bound)
from .polytope import PolytopeError, polygon, project, read_csv, write_csv

log = logging.getLogger("rcigrid")

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_INCONCLUSIVE, EXIT_NO_RCI = 0, 1, 2, 3, 4
STATUS_EXIT = {CONVERGED: EXIT_OK, EMPTY_FAILURE: EXIT_EMPTY, INCONCLUSIVE: EXIT_INCONCLUSIVE}
MAX_CENTRAL_DIM = 6


class CliError(Exception):
    def __init__(self, msg, code=EXIT_USAGE):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command, out):
        self.out = out
        self.doc = {"command": command, "version": __version__, "argv": sys.argv[1:],
                    "inputs": {}, "config": {}, "outputs": [], "timings_s": {}}
        self._t = {}

    def input(self, path):
        self.doc["inputs"][path] = _sha256(path)

    def output(self, name):
        self.doc["outputs"].append(name)
        return os.path.join(self.out, name)

    def start(self, phase):
        self._t[phase] = time.perf_counter()

    def stop(self, phase):
        self.doc["timings_s"][phase] = round(time.perf_counter() - self._t.pop(phase), 6)

    def write(self):
        path = os.path.join(self.out, f"manifest_{self.doc['command']}.json")
        with open(path, "w") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_matrix(path, M):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def _load_case(path, man):
    try:
        spec, cons = load_network(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}")
    except (NetworkSpecError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: {exc}")
    man.input(path)
    return spec, cons


def _build(spec, h):
    try:
        return build_model(spec, h)
    except (SingularBusError, SingularNetworkError, ValueError) as exc:
        raise CliError(str(exc))


# ---------------------------------------------------------------- model

def cmd_model(args):
    man = Manifest("model", args.out)
    spec, cons = _load_case(args.spec, man)
    man.doc["config"] = {"h": args.h}
    model, subs, dm = _build(spec, args.h)
    bound = theorem1_step_bound(subs)
    _write_matrix(man.output("A.csv"), model.A)
    _write_matrix(man.output("B.csv"), model.B)
    _write_matrix(man.output("E.csv"), model.E)
    for s in dm.subsystems:
        for name in ("A1", "B1", "A2", "B2", "E"):
            M = getattr(s, name)
            fname = f"block_{s.bus_id}_{name}.csv"
            if M.size:
                _write_matrix(man.output(fname), M)
            else:
                with open(man.output(fname), "w") as fh:
                    fh.write("")
    summary = {
        "n_buses": len(spec.buses), "n_generators": len(model.generator_ids),
        "n_loads": len(model.load_ids), "generator_ids": list(model.generator_ids),
        "load_ids": list(model.load_ids), "h": args.h,
        "step_bound": bound if np.isfinite(bound) else None,
        "neighbors": {s.bus_id: [model.generator_ids[j] for j in s.neighbors]
                      for s in subs},
    }
    with open(man.output("model.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"N_B={summary['n_buses']} N_G={summary['n_generators']} N_L={summary['n_loads']}")
    for g, nb in summary["neighbors"].items():
        print(f"bus {g}: neighbors {','.join(nb) if nb else '-'}")
    print(f"step bound (c=1): {bound:.6g} s" if np.isfinite(bound) else "step bound: inf")
    man.write()
    return EXIT_OK


# ---------------------------------------------------------------- rci

def write_boundaries(path, entries):
    """``entries``: iterable of (set kind, bus, k, 2-D HPolytope)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "bus", "k", "idx", "delta_rad", "omega_rad_s"])
        for kind, bus, k, P in entries:
            if P.is_empty_marker:
                continue
            for n, v in enumerate(polygon(P)):
                w.writerow([kind, bus, k, n, repr(float(v[0])), repr(float(v[1]))])


def cmd_rci(args):
    man = Manifest("rci", args.out)
    spec, cons = _load_case(args.spec, man)
    cfg = IterationConfig(epsilon=args.epsilon, k_max=args.kmax, l_max=args.lmax,
                          history=args.history)
    man.doc["config"] = {"mode": args.mode, "h": args.h, "epsilon": args.epsilon,
                         "k_max": args.kmax, "l_max": args.lmax, "c": 1.0}
    model, subs, dm = _build(spec, args.h)
    gens = list(dm.generator_ids)
    X, U, D = network_sets(dm, cons)
    bound = theorem1_step_bound(subs)
    man.doc["config"]["step_bound"] = bound if np.isfinite(bound) else None

    man.start("rci")
    if args.mode == "centralized":
        if 2 * len(gens) > MAX_CENTRAL_DIM:
            raise CliError(f"centralized mode is limited to {MAX_CENTRAL_DIM // 2} "
                           f"generators, case has {len(gens)}")
        res = centralized_rci_network(dm, cons, cfg)
        joint = res.sets[0]
        write_csv(man.output("rci_joint.csv"), joint)
        per_bus = ([project(joint, [2 * i, 2 * i + 1]) for i in range(len(gens))]
                   if not joint.is_empty_marker else [joint] * len(gens))
        hist = [[project(H, [2 * i, 2 * i + 1]) for i in range(len(gens))]
                for H in res.history if not H.is_empty_marker]
    else:
        res = distributed_rci_network(dm, cons, cfg, step_bound=bound)
        per_bus = res.sets
        hist = res.history
        for w in res.warnings:
            log.warning("%s", w)
    man.stop("rci")

    entries = [("safe", g, 0, X[i]) for i, g in enumerate(gens)]
    if res.status == CONVERGED:
        for i, g in enumerate(gens):
            # shadows of the joint set are drawn but are not per-bus RCIs
            if args.mode == "distributed":
                write_csv(man.output(f"rci_bus_{g}.csv"), per_bus[i])
            entries.append(("rci", g, 0, per_bus[i]))
    for k, sets in enumerate(hist):
        entries += [("iterate", g, k, sets[i]) for i, g in enumerate(gens)]
    write_boundaries(man.output("set_boundaries.csv"), entries)

    with open(man.output("rci_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["status", "k_used", "failed_bus"])
        w.writerow([res.status, res.k_used, res.failed_bus or ""])
    if args.mode == "distributed":
        with open(man.output("consensus.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "sweeps", "max_delta_limit_changes"])
            for k, (n, ch) in enumerate(zip(res.consensus_iterations, res.sweep_changes)):
                w.writerow([k, n, ";".join(repr(float(c)) for c in ch)])
    man.doc["status"] = res.status
    man.doc["k_used"] = res.k_used
    man.doc["consensus_sweeps"] = list(res.consensus_iterations)
    if res.warnings:
        man.doc["warnings"] = list(res.warnings)
    man.write()
    print(f"status={res.status} k={res.k_used}"
          + (f" failed_bus={res.failed_bus}" if res.failed_bus else ""))
    return STATUS_EXIT[res.status]


# ---------------------------------------------------------------- simulate

def _load_rci_dir(rci_dir, gens, man):
    sets = []
    for g in gens:
        path = os.path.join(rci_dir, f"rci_bus_{g}.csv")
        if not os.path.exists(path):
            return None
        man.input(path)
        sets.append(read_csv(path))
    return sets


def cmd_simulate(args):
    man = Manifest("simulate", args.out)
    spec, cons = _load_case(args.spec, man)
    model, subs, dm = _build(spec, args.step)
    gens = list(dm.generator_ids)
    if args.target_bus not in gens:
        raise CliError(f"--target-bus {args.target_bus!r} is not a generator bus "
                       f"(generators: {', '.join(gens)})")
    S = None
    if args.rci_dir:
        mpath = os.path.join(args.rci_dir, "manifest_rci.json")
        if os.path.exists(mpath):
            with open(mpath) as fh:
                h_rci = json.load(fh).get("config", {}).get("h")
            if h_rci is not None and abs(h_rci - args.step) > 1e-12:
                raise CliError(f"invariant sets were computed with h={h_rci}, "
                               f"simulation step is {args.step}")
        S = _load_rci_dir(args.rci_dir, gens, man)
    if S is None and args.controller == "rmpc":
        raise CliError("rmpc needs invariant sets: pass the directory written by "
                       "'rcigrid rci'", EXIT_NO_RCI)
    X, U, D = network_sets(dm, cons)
    cfg = SimConfig(horizon=args.horizon, step=args.step,
                    target_bus=gens.index(args.target_bus), controller=args.controller,
                    inits=args.inits, seed=args.seed)
    try:
        cfg.n_steps
    except ValueError as exc:
        raise CliError(str(exc))
    man.doc["config"] = {"h": args.step, "horizon": args.horizon,
                         "controller": args.controller, "target_bus": args.target_bus,
                         "inits": args.inits, "seed": args.seed,
                         "cost": {"Q": CostSpec().Q.tolist(), "r": CostSpec().r}}
    man.start("simulate")
    loop = ClosedLoop(dm, X, U, D, S_sets=S)
    logs = run_experiment(loop, cfg)
    man.stop("simulate")

    c = args.controller
    write_trajectories(man.output(f"traj_{c}.csv"), logs)
    write_disturbances(man.output(f"dist_{c}.csv"), logs)
    with open(man.output(f"summary_{c}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "violating_inits", "first_violation_t", "events"])
        for i, g in enumerate(gens):
            firsts = [lg.first_violation()[i] for lg in logs]
            hits = [f for f in firsts if f is not None]
            first_t = f"{min(hits) * args.step:.6g}" if hits else ""
            n_ev = sum(1 for lg in logs for e in lg.events if e[1] == g)
            w.writerow([g, len(hits), first_t, n_ev])
            print(f"bus {g}: {len(hits)} of {len(logs)} runs leave the safe set"
                  + (f", first at t={first_t} s" if hits else ""))
    man.write()
    return EXIT_OK


# ---------------------------------------------------------------- plot

def cmd_plot(args):
    from . import plotting

    man = Manifest("plot", args.out)
    d = args.data_dir
    bpath = os.path.join(d, "set_boundaries.csv")
    traj_paths = sorted(glob.glob(os.path.join(d, "traj_*.csv")))
    missing = []
    if args.kind in ("sets", "phase") and not os.path.exists(bpath):
        missing.append(bpath)
    if args.kind in ("phase", "time") and not traj_paths:
        missing.append(os.path.join(d, "traj_<controller>.csv"))
    if missing:
        for m in missing:
            print(f"missing input: {m}", file=sys.stderr)
        return EXIT_USAGE
    bounds = {}
    if os.path.exists(bpath):
        man.input(bpath)
        bounds = plotting.read_boundaries(bpath)
    trajs = {}
    for p in traj_paths:
        man.input(p)
        trajs[os.path.basename(p)[5:-4]] = read_trajectories(p)
    man.doc["config"] = {"kind": args.kind}

    if bounds:
        buses = sorted({b for (_, b, _) in bounds}, key=_bus_key)
    else:
        buses = sorted({r["bus"] for rows in trajs.values() for r in rows}, key=_bus_key)
    for bus in buses:
        if args.kind == "sets":
            plotting.plot_sets(bounds, bus, man.output(f"sets_{bus}.svg"))
        elif args.kind == "phase":
            plotting.plot_phase(bounds, trajs, bus, man.output(f"phase_{bus}.svg"))
        else:
            safe = bounds.get(("safe", bus, 0))
            dmax = max(abs(p[0]) for p in safe) if safe else None
            plotting.plot_time(trajs, bus, dmax, man.output(f"time_{bus}.svg"))
    man.write()
    print(f"wrote {len(man.doc['outputs'])} figure(s) to {args.out}")
    return EXIT_OK


def _bus_key(b):
    return (0, int(b), b) if b.isdigit() else (1, 0, b)


# ---------------------------------------------------------------- main

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="rcigrid", description="Robust controlled-invariant sets for "
                "power-system frequency dynamics.")
    p.add_argument("--version", action="version", version=f"rcigrid {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("model", parents=[common], help="build and export the linear model")
    m.add_argument("spec")
    m.add_argument("--h", type=float, default=0.05, help="Euler step in s")
    m.set_defaults(func=cmd_model)

    r = sub.add_parser("rci", parents=[common], help="compute invariant sets")
    r.add_argument("spec")
    r.add_argument("--mode", choices=("distributed", "centralized"), default="distributed")
    r.add_argument("--h", type=float, default=0.05)
    r.add_argument("--epsilon", type=float, default=1e-3)
    r.add_argument("--kmax", type=int, default=200)
    r.add_argument("--lmax", type=int, default=50)
    r.add_argument("--history", action="store_true", help="keep every iterate for plots")
    r.set_defaults(func=cmd_rci)

    s = sub.add_parser("simulate", parents=[common], help="adversarial closed-loop runs")
    s.add_argument("spec")
    s.add_argument("rci_dir", nargs="?", default=None)
    s.add_argument("--controller", choices=CONTROLLERS, default="rmpc")
    s.add_argument("--target-bus", default=None,
                   help="generator bus id the adversary targets (default: first generator)")
    s.add_argument("--horizon", type=float, default=2.0)
    s.add_argument("--step", type=float, default=0.05)
    s.add_argument("--inits", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    pl = sub.add_parser("plot", parents=[common], help="render SVG figures")
    pl.add_argument("data_dir")
    pl.add_argument("--kind", choices=("sets", "phase", "time"), default="sets")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "target_bus", "x") is None:
        args.target_bus = _first_generator(args.spec)
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, PolytopeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _first_generator(path):
    try:
        spec, _ = load_network(path)
    except Exception:
        return ""  # the command itself reports the parse error
    return spec.generators[0].id if spec.generators else ""


if __name__ == "__main__":
    sys.exit(main())
