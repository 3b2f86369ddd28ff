"""Instance files, allocation files and report persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

from .core import Allocation, CakeError, Interval, PiecewiseDensity, Profile, common_refinement


class InputError(ValueError):
    """An input file could not be parsed or failed validation."""


def _line_of(text: str, needle: str, occurrence: int) -> int | None:
    pos = -1
    for _ in range(occurrence + 1):
        pos = text.find(needle, pos + 1)
        if pos < 0:
            return None
    return text.count("\n", 0, pos) + 1


def _parse_json(text: str, source: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def profile_from_dict(data: dict, source: str = "<instance>", text: str = "") -> Profile:
    """Validate and build a profile from the instance-file schema."""

    def fail(msg: str, agent: int | None = None):
        line = _line_of(text, '"breakpoints"', agent) if agent is not None and text else None
        where = f"{source}:{line}" if line else source
        raise InputError(f"{where}: {msg}")

    if not isinstance(data, dict):
        fail("top level must be an object")
    try:
        cake = Interval(float(data["cake"]["lo"]), float(data["cake"]["hi"]))
    except (KeyError, TypeError, ValueError) as exc:
        fail(f"cake: expected {{'lo': number, 'hi': number}} ({exc})")
    agents = data.get("agents")
    if not isinstance(agents, list) or not agents:
        fail("agents: expected a non-empty list")
    dens = []
    for k, a in enumerate(agents):
        try:
            bps, vals = a["breakpoints"], a["values"]
        except (KeyError, TypeError):
            fail(f"agents[{k}]: needs 'breakpoints' and 'values'", k)
        if len(vals) != len(bps) - 1:
            fail(f"agents[{k}].values: expected {len(bps) - 1} values for {len(bps)} breakpoints, got {len(vals)}", k)
        try:
            dens.append(PiecewiseDensity(tuple(bps), tuple(vals), str(a.get("name", f"a{k + 1}"))))
        except (CakeError, TypeError, ValueError) as exc:
            fail(f"agents[{k}]: {exc}", k)
    try:
        excluded = [Interval(lo, hi) for lo, hi in data.get("excluded", [])]
        return common_refinement(dens, cake, pinned=data.get("cells", ()), excluded=excluded)
    except CakeError as exc:
        fail(str(exc))


def load_instance(path: str | os.PathLike) -> Profile:
    text = Path(path).read_text()
    return profile_from_dict(_parse_json(text, str(path)), str(path), text)


def load_allocation(path: str | os.PathLike) -> Allocation:
    text = Path(path).read_text()
    data = _parse_json(text, str(path))
    try:
        return Allocation.from_pairs([[tuple(iv) for iv in b] for b in data["bundles"]], bool(data.get("complete", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad allocation file ({exc})") from None


def instance_digest(profile: Profile) -> str:
    return hashlib.sha256(dumps(profile.to_dict()).encode()).hexdigest()


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def utility_table(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["agent", "utility", "mnw_utility", "ratio"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
