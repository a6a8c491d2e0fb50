import json
import subprocess
import sys
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_smoke():
    out = subprocess.run(
        [sys.executable, str(BENCH), "--n-users", "50", "--events-per-user", "5", "--repeat", "1", "--json"],
        capture_output=True, text=True, check=True,
    ).stdout
    data = json.loads(out)
    assert set(data["seconds"]) == {"parse_csv", "write_csv", "lookup_assign", "gyration", "home_stats"}
    assert all(v >= 0 for row in data["seconds"].values() for v in row.values())
