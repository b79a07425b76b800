"""Command line entry point: ``pmtx <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

from pmtx.pmem import Region


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


def _region_paths(directory: str) -> dict:
    return {Region.LOG: os.path.join(directory, "log.pm"), Region.TREE: os.path.join(directory, "tree.pm")}


# -- commands ------------------------------------------------------------------------------

def cmd_fill(args) -> int:
    if args.engine == "kernel":
        from pmtx.harness.metrics import fill

        reports = fill(args.tree, args.keys, args.seed, not args.no_lookahead, args.backend, remove=args.remove)
        _dump([r.to_dict() for r in reports])
        return 0
    from pmtx.engine import create_tree
    from pmtx.harness.images import random_keys

    keys = [int(k) for k in random_keys(args.keys, args.seed)]
    eng = create_tree(args.tree, args.keys + 2, lookahead=not args.no_lookahead)
    t0 = time.perf_counter()
    for k in keys:
        eng.insert(k, k)
    if args.remove:
        for k in keys:
            eng.remove(k)
    eng.validate([] if args.remove else sorted(set(keys)))
    report = eng.metrics_report()
    report.update({"tree": args.tree, "keys": args.keys, "seed": args.seed, "engine": "persistent",
                   "log_footprint": eng.log_footprint(), "seconds": round(time.perf_counter() - t0, 3)})
    _dump(report)
    return 0


def cmd_crashtest(args) -> int:
    from pmtx.harness.crashtest import CrashSchedule, campaign, run_trial

    if args.replay:
        with open(args.replay) as fh:
            sched = CrashSchedule.from_json(fh.read())
        res = run_trial(sched)
        _dump({"schedule": asdict(sched), "crashed": res.crashed, "completed_ops": res.completed_ops,
               "in_flight_applied": res.in_flight_applied, "error": res.error})
        return 0 if res.ok else 1

    saved = []

    def keep(res):
        if args.save_failures:
            os.makedirs(args.save_failures, exist_ok=True)
            path = os.path.join(args.save_failures, f"schedule-{len(saved)}.json")
            with open(path, "w") as fh:
                fh.write(res.schedule.to_json())
            saved.append(path)

    summary = campaign(args.trials, keys=args.keys, seed=args.seed, trees=args.trees, modes=args.modes,
                       ops=args.ops, on_failure=keep)
    summary["saved"] = saved
    _dump(summary)
    return 0 if summary["failures"] == 0 else 1


def cmd_metrics(args) -> int:
    from pmtx.harness.metrics import lookahead_gain

    rows = [lookahead_gain(t, n, args.seed, args.backend) for t in args.trees for n in args.sizes]
    _dump(rows)
    return 0


def cmd_bench(args) -> int:
    from pmtx.harness.bench import bench

    _dump(bench(args.trees, args.keys, args.seed, args.repeat))
    return 0


def cmd_scenario(args) -> int:
    from pmtx.harness import scenarios

    if args.name == "fibonacci":
        out = [asdict(scenarios.fibonacci_worst_case(h)) for h in range(4, args.height + 1)]
        ok = all(r["build_rotations"] == 0 for r in out)
    elif args.name == "rotations":
        reports = [scenarios.rotation_atomicity(t) for t in args.trees]
        out = [{"tree": r.tree, "links": r.links, "ok": r.ok, "cases": [asdict(c) for c in r.cases]}
               for r in reports]
        ok = all(r.ok for r in reports)
    elif args.name == "idempotence":
        reports = [scenarios.idempotence_check(t, args.ops, args.seed) for t in args.trees]
        out = [dict(asdict(r), ok=r.ok) for r in reports]
        ok = all(r.ok for r in reports)
    else:
        out = {t: scenarios.log_footprint(t) for t in args.trees}
        ok = all(v <= scenarios.LOG_LIMIT[t] for t in out for v in out[t].values())
    _dump(out)
    return 0 if ok else 1


def cmd_lockstress(args) -> int:
    from pmtx import lock

    if args.mode == "explore":
        res = lock.explore(args.writers, args.readers, args.k, args.f)
        _dump({"states": res.states, "transitions": res.transitions, "completed": res.completed,
               "deadlocks": res.deadlocks, "violations": res.violations[:10], "ok": res.ok})
    elif args.mode == "shiftkill":
        res = lock.shift_kill_check(args.f)
        _dump(dict(asdict(res), ok=res.ok))
    else:
        res = lock.stress(args.clients, args.rounds, args.k, args.f, seed=args.seed)
        _dump(dict(asdict(res), ok=res.ok))
    return 0 if res.ok else 1


def cmd_agent(args) -> int:
    from pmtx.engine import new_domain
    from pmtx.pmem import PersistenceDomain
    from pmtx.remote import Agent

    paths = _region_paths(args.dir) if args.dir else None
    if paths and all(os.path.exists(p) for p in paths.values()):
        dom = PersistenceDomain.open(paths)
    else:
        if paths:
            os.makedirs(args.dir, exist_ok=True)
        dom = new_domain(args.tree, args.capacity, paths)
    agent = Agent(dom, host=args.host, port=args.port)
    print(f"agent listening on {agent.address[0]}:{agent.address[1]}", flush=True)
    try:
        agent.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        dom.close()
    return 0


def cmd_client(args) -> int:
    from pmtx.engine import open_tree
    from pmtx.harness.images import random_keys
    from pmtx.remote import RemoteBackend, RemoteClient

    keys = [int(k) for k in random_keys(args.keys, args.seed)]
    t0 = time.perf_counter()
    with RemoteClient(args.host, args.port, args.pid) as client:
        eng = open_tree(RemoteBackend(client, cache_log=args.cache_log))
        eng.recover()
        for k in keys:
            eng.insert(k, k ^ 0x77)
        sent = {m.name: c for m, c in client.sent.items()}
    elapsed = time.perf_counter() - t0
    _dump({"keys": args.keys, "requests": sent, "seconds": round(elapsed, 3),
           "inserts_per_s": round(args.keys / elapsed, 1) if elapsed else None})
    return 0


# -- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmtx", description="Persistent search trees driven by redo-log state machines.")
    sub = p.add_subparsers(dest="command", required=True)
    trees = dict(nargs="+", choices=("rbt", "avl"), default=["rbt", "avl"])

    f = sub.add_parser("fill", help="insert random keys and report epoch statistics")
    f.add_argument("--tree", choices=("rbt", "avl"), default="rbt")
    f.add_argument("--keys", type=int, default=1000)
    f.add_argument("--seed", type=int, default=1)
    f.add_argument("--no-lookahead", action="store_true")
    f.add_argument("--remove", action="store_true", help="then remove every key in random order")
    f.add_argument("--engine", choices=("kernel", "persistent"), default="kernel")
    f.add_argument("--backend", choices=("auto", "python", "compiled"), default="auto")
    f.set_defaults(func=cmd_fill)

    c = sub.add_parser("crashtest", help="randomized crash injection campaign or single replay")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--keys", type=int, default=1000)
    c.add_argument("--ops", type=int, default=3)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trees", **trees)
    c.add_argument("--modes", nargs="+", choices=("insert", "remove", "mixed"), default=["insert", "remove"])
    c.add_argument("--replay", metavar="FILE", help="re-run one saved schedule")
    c.add_argument("--save-failures", metavar="DIR")
    c.set_defaults(func=cmd_crashtest)

    m = sub.add_parser("metrics", help="epochs per insert with and without look-ahead")
    m.add_argument("--trees", **trees)
    m.add_argument("--sizes", nargs="+", type=int, default=[1000, 10_000, 100_000, 1_000_000])
    m.add_argument("--seed", type=int, default=1)
    m.add_argument("--backend", choices=("auto", "python", "compiled"), default="auto")
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="pure-Python kernel versus compiled kernel")
    b.add_argument("--trees", **trees)
    b.add_argument("--keys", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--repeat", type=int, default=3)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("scenario", help="constructed workloads")
    s.add_argument("name", choices=("fibonacci", "rotations", "idempotence", "footprint"))
    s.add_argument("--trees", **trees)
    s.add_argument("--height", type=int, default=22)
    s.add_argument("--ops", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scenario)

    ls = sub.add_parser("lockstress", help="lock protocol checks")
    ls.add_argument("--mode", choices=("stress", "explore", "shiftkill"), default="stress")
    ls.add_argument("--clients", type=int, default=16)
    ls.add_argument("--rounds", type=int, default=40)
    ls.add_argument("--writers", type=int, default=2)
    ls.add_argument("--readers", type=int, default=2)
    ls.add_argument("-k", type=int, default=None, help="reader slots")
    ls.add_argument("-f", type=int, default=None, help="queue slots")
    ls.add_argument("--seed", type=int, default=0)
    ls.set_defaults(func=cmd_lockstress)

    a = sub.add_parser("agent", help="serve a tree over TCP")
    a.add_argument("--tree", choices=("rbt", "avl"), default="rbt")
    a.add_argument("--capacity", type=int, default=100_000)
    a.add_argument("--dir", help="directory holding log.pm and tree.pm (in memory if omitted)")
    a.add_argument("--host", default="127.0.0.1")
    a.add_argument("--port", type=int, default=7070)
    a.set_defaults(func=cmd_agent)

    cl = sub.add_parser("client", help="insert random keys through a running agent")
    cl.add_argument("--host", default="127.0.0.1")
    cl.add_argument("--port", type=int, default=7070)
    cl.add_argument("--pid", type=int, default=os.getpid())
    cl.add_argument("--keys", type=int, default=1000)
    cl.add_argument("--seed", type=int, default=1)
    cl.add_argument("--cache-log", action="store_true")
    cl.set_defaults(func=cmd_client)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "lockstress":
        # explore runs tiny tables by default, stress the full-size ones
        small = args.mode == "explore"
        args.k = args.k if args.k is not None else (2 if small else 8)
        args.f = args.f if args.f is not None else (2 if small else 8)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
