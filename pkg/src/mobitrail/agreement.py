"""Simple Matching Coefficient between home methods."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from mobitrail.homedetect import METHODS, HomeAssignment, HomeTable, MethodId

PAIRS = tuple(itertools.combinations(range(1, 6), 2))


@dataclass(frozen=True)
class AssignmentVector:
    method: MethodId
    entries: Mapping[str, int]

    def __post_init__(self):
        if any(v is None for v in self.entries.values()):
            raise ValueError("assignment vectors cannot hold missing regions")


@dataclass(frozen=True)
class AgreementMatrix:
    methods: tuple[MethodId, ...]
    smc: tuple[tuple[float, ...], ...]
    n_users: int

    def value(self, a: int, b: int) -> float:
        return self.smc[a - 1][b - 1]

    def off_diagonal(self) -> list[float]:
        return [self.value(a, b) for a, b in PAIRS]

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "methods": [int(m) for m in self.methods],
            "matrix": [list(row) for row in self.smc],
            "pairs": [
                {"pair": label, "smc": v, "disagreement": 1.0 - v} for label, v in radar_export(self)
            ],
        }


def smc(x: AssignmentVector, y: AssignmentVector) -> float:
    """Fraction of users given the same region by both vectors."""
    if x.entries.keys() != y.entries.keys():
        raise ValueError("assignment vectors cover different users")
    n = len(x.entries)
    if n == 0:
        raise ValueError("SMC of empty vectors")
    same = sum(1 for u, r in x.entries.items() if y.entries[u] == r)
    return same / n


def _matrix_from_regions(region: np.ndarray) -> AgreementMatrix:
    n = region.shape[0]
    rows = []
    for i in range(5):
        row = []
        for j in range(5):
            same = int(np.count_nonzero(region[:, i] == region[:, j]))
            row.append(same / n)
        rows.append(tuple(row))
    return AgreementMatrix(METHODS, tuple(rows), n)


def pairwise_matrix(assignments, users: Iterable[str] | None = None) -> AgreementMatrix:
    """SMC for every method pair over one common user population.

    ``assignments`` is a :class:`HomeTable` or a mapping from user id to the
    five :class:`HomeAssignment` of that user.  Without ``users``, the
    population is every user with a region under all five methods; with it,
    each listed user must have all five.
    """
    table = assignments if isinstance(assignments, HomeTable) else HomeTable.from_assignments(assignments)
    if users is None:
        keep = table.complete()
    else:
        wanted = set(users)
        unknown = wanted.difference(table.user_ids)
        if unknown:
            raise ValueError(f"users without assignments: {sorted(unknown)[:5]}")
        keep = np.array([u in wanted for u in table.user_ids], dtype=bool)
        if not table.complete()[keep].all():
            raise ValueError("every compared user needs a region under all five methods")
    region = table.region[keep]
    if region.shape[0] == 0:
        raise ValueError("no users to compare")
    return _matrix_from_regions(region)


def vectors(assignments: Mapping[str, Sequence[HomeAssignment]]) -> list[AssignmentVector]:
    """Split per-user assignments into one vector per method (complete users only)."""
    complete = {u: a for u, a in assignments.items() if all(x.region_id is not None for x in a)}
    return [
        AssignmentVector(m, {u: a[int(m) - 1].region_id for u, a in complete.items()}) for m in METHODS
    ]


def radar_export(m: AgreementMatrix) -> list[tuple[str, float]]:
    return [(f"{a}-{b}", m.value(a, b)) for a, b in PAIRS]


def write_json(m: AgreementMatrix, fh) -> None:
    fh.write(json.dumps(m.to_dict(), indent=2) + "\n")


def write_radar_csv(m: AgreementMatrix, fh) -> None:
    fh.write("pair,value\n")
    for label, v in radar_export(m):
        fh.write(f"{label},{v!r}\n")
