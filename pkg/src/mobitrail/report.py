"""End-to-end runs: one cohort through the pipeline, two cohorts into a report.

The report compares an everyday-activity cohort (A) with a travel-biased
cohort (B) and checks three directional claims:

- B has the larger mean radius of gyration;
- A has the larger minimum pairwise SMC;
- B's largest disagreement is at least twice A's (and non-zero).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mobitrail import agreement, gyration, homedetect, ingest, synth
from mobitrail.agreement import AgreementMatrix
from mobitrail.gyration import GyrationTable
from mobitrail.homedetect import HomeTable, NightWindow
from mobitrail.ingest import FilterPolicy, TraceSet
from mobitrail.model import RegionPartition
from mobitrail.synth import ProfileConfig

REPORT_VERSION = 1
DISAGREEMENT_RATIO = 2.0


@dataclass
class PipelineResult:
    traces: TraceSet  # pruned, before the filter
    kept: TraceSet  # after the filter
    gyration: GyrationTable  # over ``traces``
    homes: HomeTable  # over ``kept``
    agreement: AgreementMatrix | None  # None when no user has all five homes
    report: ingest.IngestReport


def run_pipeline(
    events,
    partition: RegionPartition,
    night: NightWindow = NightWindow(),
    policy: FilterPolicy = FilterPolicy(),
    threads: int = 1,
    report: ingest.IngestReport | None = None,
) -> PipelineResult:
    """prune -> group -> gyration; filter -> homes -> agreement.

    r_g is summarised over every pruned user (the activity/r_g figures
    cover the whole dataset); homes and SMC use the filtered population.
    """
    report = report or ingest.IngestReport(parsed=len(events))
    kept_events, dropped = ingest.prune(events, partition, threads=threads)
    report.pruned_unresolvable += dropped
    traces = ingest.group_traces(kept_events)
    report.users_in = len(traces)
    gyr = gyration.gyration_table(traces, threads=threads)
    kept = ingest.apply_filter(traces, FilterPolicy(policy.min_events, policy.above_average))
    homes = homedetect.detect_homes(kept, night, threads=threads)
    if policy.consensus_country is not None:
        cc = homedetect.consensus_countries(homes, partition)
        kept = ingest.apply_filter(kept, FilterPolicy(consensus_country=policy.consensus_country), cc)
        want = policy.consensus_country.upper()
        homes = homes.subset(np.array([cc[u] == want for u in homes.user_ids], dtype=bool))
    report.users_after_filter = len(kept)
    matrix = agreement.pairwise_matrix(homes) if homes.complete().any() else None
    return PipelineResult(traces, kept, gyr, homes, matrix, report)


@dataclass
class CohortResult:
    label: str
    profile: ProfileConfig
    seed: int
    n_users: int
    n_events: int
    pipeline: PipelineResult
    recovery: list[float]  # per method: share of compared users whose planted home was found

    @property
    def mean_r_g(self) -> float:
        return float(self.pipeline.gyration.r_g_km.mean())

    @property
    def min_smc(self) -> float:
        return min(self.pipeline.agreement.off_diagonal())

    @property
    def max_disagreement(self) -> float:
        return 1.0 - self.min_smc


def run_cohort(
    profile: ProfileConfig,
    n_users: int,
    partition: RegionPartition,
    seed: int,
    night: NightWindow = NightWindow(),
    policy: FilterPolicy = FilterPolicy(above_average=True),
    threads: int = 1,
    label: str | None = None,
) -> CohortResult:
    events, truth = synth.generate(profile, n_users, partition, seed)
    res = run_pipeline(events, partition, night, policy, threads)
    if res.agreement is None:
        raise ValueError(f"cohort {profile.name!r}: no user left to compare after filtering")
    homes = res.homes
    planted = np.array([truth.region_of(u) for u in homes.user_ids], dtype=np.int64)
    recovery = [float((homes.region[:, j] == planted).mean()) for j in range(5)]
    return CohortResult(label or profile.name, profile, seed, n_users, len(events), res, recovery)


def _claims(a: CohortResult, b: CohortResult) -> list[dict]:
    ra, rb = a.mean_r_g, b.mean_r_g
    sa, sb = a.min_smc, b.min_smc
    da, db = a.max_disagreement, b.max_disagreement
    return [
        {
            "id": "r_g_mean",
            "statement": f"mean r_g of {b.label} exceeds mean r_g of {a.label}",
            "a": ra,
            "b": rb,
            "pass": bool(rb > ra),
        },
        {
            "id": "min_smc",
            "statement": f"minimum pairwise SMC of {a.label} exceeds that of {b.label}",
            "a": sa,
            "b": sb,
            "pass": bool(sa > sb),
        },
        {
            "id": "max_disagreement_ratio",
            "statement": f"max disagreement of {b.label} is at least {DISAGREEMENT_RATIO:g}x that of {a.label}",
            "a": da,
            "b": db,
            "pass": bool(db > 0 and db >= DISAGREEMENT_RATIO * da),
        },
    ]


def _cohort_dict(c: CohortResult) -> dict:
    res = c.pipeline
    off = c.pipeline.agreement.off_diagonal()
    return {
        "label": c.label,
        "profile": c.profile.to_dict(),
        "seed": c.seed,
        "n_users_generated": c.n_users,
        "n_events": c.n_events,
        "n_users_compared": res.agreement.n_users,
        "distribution": gyration.distribution_json(res.gyration),
        "agreement": res.agreement.to_dict(),
        "smc_range": [min(off), max(off)],
        "disagreement_range": [1.0 - max(off), 1.0 - min(off)],
        "home_recovery": c.recovery,
    }


def build_report(
    a: CohortResult, b: CohortResult, partition: RegionPartition, night: NightWindow, policy: FilterPolicy
) -> dict:
    claims = _claims(a, b)
    return {
        "version": REPORT_VERSION,
        "partition": partition.describe(),
        "night": {"start_hour": night.start_hour, "end_hour": night.end_hour, "utc_offset_minutes": night.utc_offset_minutes},
        "filter": {
            "min_events": policy.min_events,
            "above_average": policy.above_average,
            "consensus_country": policy.consensus_country,
        },
        "cohorts": [_cohort_dict(a), _cohort_dict(b)],
        "claims": claims,
        "verdict": "PASS" if all(c["pass"] for c in claims) else "FAIL",
    }


def compare_cohorts(
    profile_a: ProfileConfig,
    profile_b: ProfileConfig,
    n_users: int,
    partition: RegionPartition,
    seed: int,
    night: NightWindow = NightWindow(),
    policy: FilterPolicy = FilterPolicy(above_average=True),
    threads: int = 1,
) -> dict:
    """Both cohorts share ``seed``, so identical profiles give identical cohorts."""
    la, lb = profile_a.name, profile_b.name
    if la == lb:
        la, lb = f"{la} (A)", f"{lb} (B)"
    a = run_cohort(profile_a, n_users, partition, seed, night, policy, threads, la)
    b = run_cohort(profile_b, n_users, partition, seed, night, policy, threads, lb)
    return build_report(a, b, partition, night, policy)


def write_json(report: dict, fh) -> None:
    fh.write(json.dumps(report, indent=2) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _matrix_md(m: Sequence[Sequence[float]]) -> list[str]:
    lines = ["| | " + " | ".join(f"m{j}" for j in range(1, 6)) + " |", "|---" * 6 + "|"]
    for i, row in enumerate(m, 1):
        lines.append(f"| m{i} | " + " | ".join(_fmt(v) for v in row) + " |")
    return lines


def write_markdown(report: dict, fh) -> None:
    a, b = report["cohorts"]
    out = [
        "# Cohort comparison",
        "",
        f"Partition `{report['partition']}`, night {report['night']['start_hour']}-{report['night']['end_hour']}"
        f" (UTC offset {report['night']['utc_offset_minutes']} min), seed {a['seed']}.",
        "",
        "## Radius of gyration (km)",
        "",
        "| cohort | users | events | mean | median | q1 | q3 |",
        "|---|---|---|---|---|---|---|",
    ]
    for c in (a, b):
        rg = c["distribution"]["r_g_km"]
        out.append(
            f"| {c['label']} | {c['distribution']['n_users']} | {c['n_events']} | {_fmt(rg['mean'])} | "
            f"{_fmt(rg['median'])} | {_fmt(rg['boxplot']['q1'])} | {_fmt(rg['boxplot']['q3'])} |"
        )
    for c in (a, b):
        lo, hi = c["disagreement_range"]
        out += [
            "",
            f"## SMC: {c['label']} ({c['n_users_compared']} users)",
            "",
            *_matrix_md(c["agreement"]["matrix"]),
            "",
            f"Disagreement range: {_fmt(lo)} to {_fmt(hi)}.",
            "Planted-home recovery by method: " + ", ".join(_fmt(v) for v in c["home_recovery"]) + ".",
        ]
    out += ["", "## Directional claims", ""]
    for cl in report["claims"]:
        out.append(f"- {'PASS' if cl['pass'] else 'FAIL'}: {cl['statement']} (A {_fmt(cl['a'])}, B {_fmt(cl['b'])})")
    out += ["", f"Verdict: {report['verdict']}", ""]
    fh.write("\n".join(out))
