import json
from pathlib import Path

import pytest
from hypothesis import settings

import mobitrail
from mobitrail import _backend
from mobitrail.model import Event, GeoPoint

settings.register_profile("default", deadline=None)
settings.load_profile("default")

SCHEMA_DIR = Path(mobitrail.__file__).with_name("schemas")


def schema_validator(name):
    """Validator for one bundled schema, with the sibling schemas resolvable by $ref."""
    from jsonschema import Draft202012Validator
    from referencing import Registry, Resource

    resources = []
    for p in SCHEMA_DIR.glob("*.json"):
        resources.append((p.name, Resource.from_contents(json.loads(p.read_text()))))
    registry = Registry().with_resources(resources)
    schema = json.loads((SCHEMA_DIR / f"{name}.json").read_text())
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema, registry=registry)


def ev(user, ts, lat, lon, region=None):
    return Event(user, ts, GeoPoint(lat, lon), region)


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run a test once per importable kernel backend."""
    with _backend.use(request.param):
        yield request.param


# ---- acceptance summary: one pass/fail line per criterion

ACCEPTANCE_LINES = []


def record_criterion(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
