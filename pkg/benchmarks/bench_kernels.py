"""Time the hot kernels under the compiled and the numpy backend.

    python3 benchmarks/bench_kernels.py --n-users 20000 --events-per-user 50
    python3 benchmarks/bench_kernels.py --json > bench.json

Each row is the best of ``--repeat`` runs over the same synthetic cohort.
"""

import argparse
import io
import json
import math
import time

from mobitrail import _backend, homedetect, synth
from mobitrail.gyration import gyration_table
from mobitrail.ingest import group_traces, parse_events, prune, write_events_csv
from mobitrail.model import GridPartition, bundled_provinces


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def build_cases(n_users, per_user, seed, threads):
    grid = GridPartition(0.5)
    prof = synth.with_overrides(synth.TRANSACTION_LIKE, events_mu=math.log(per_user), events_sigma=0.0)
    events, _ = synth.generate(prof, n_users, grid, seed)
    kept, _ = prune(events, grid)
    traces = group_traces(kept)
    buf = io.BytesIO()
    write_events_csv(traces, buf)
    raw = buf.getvalue()
    provinces = bundled_provinces()
    return len(events), {
        "parse_csv": lambda: parse_events(io.BytesIO(raw)),
        "write_csv": lambda: write_events_csv(traces, io.BytesIO()),
        "lookup_assign": lambda: provinces.assign(events.lat, events.lon, threads=threads),
        "gyration": lambda: gyration_table(traces, threads=threads),
        "home_stats": lambda: homedetect.detect_homes(traces, threads=threads),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-users", type=int, default=20000)
    ap.add_argument("--events-per-user", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    args = ap.parse_args(argv)

    n_events, cases = build_cases(args.n_users, args.events_per_user, args.seed, args.threads)
    backends = _backend.available()
    rows = {}
    for name, fn in cases.items():
        rows[name] = {}
        for b in backends:
            with _backend.use(b):
                fn()  # warm-up
                rows[name][b] = best_of(fn, args.repeat)

    if args.json:
        print(json.dumps({"n_events": n_events, "threads": args.threads, "seconds": rows}, indent=2))
        return
    print(f"{n_events} events, {args.n_users} users, threads={args.threads}, best of {args.repeat}")
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, r in rows.items():
        line = f"{name:<14}" + "".join(f"{r[b]:>11.3f}s" for b in backends)
        if len(backends) == 2:
            line += f"{r['python'] / r['cython']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
