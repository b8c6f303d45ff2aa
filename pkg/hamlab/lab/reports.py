"""Artifact writers: CSV tables, manifest.json, summary.txt."""
import csv
import json
import logging
import math
from pathlib import Path
from typing import NamedTuple

logger = logging.getLogger(__name__)


class Table(NamedTuple):
    name: str
    header: tuple
    rows: list


class Assertion(NamedTuple):
    name: str
    passed: bool
    detail: str = ""


class Outcome(NamedTuple):
    tables: list
    assertions: list
    files: dict = {}
    extra: dict = {}

    @property
    def passed(self):
        return all(a.passed for a in self.assertions)


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(out_dir, table):
    path = Path(out_dir) / f"{table.name}.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(table.header)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
    return path


def write_json(out_dir, name, data):
    path = Path(out_dir) / name
    path.write_text(json.dumps(data, sort_keys=True, indent=2, default=_cell) + "\n")
    return path


def write_summary(out_dir, assertions):
    lines = [f"{'PASS' if a.passed else 'FAIL'} {a.name}: {a.detail}".rstrip(": ") for a in assertions]
    failed = sum(1 for a in assertions if not a.passed)
    lines.append(f"{len(assertions) - failed}/{len(assertions)} assertions passed")
    path = Path(out_dir) / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def write_outcome(out_dir, manifest, outcome):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_json(out_dir, "manifest.json", manifest)]
    written += [write_csv(out_dir, table) for table in outcome.tables]
    for name, text in sorted(outcome.files.items()):
        path = out_dir / name
        path.write_text(text)
        written.append(path)
    written.append(write_summary(out_dir, outcome.assertions))
    logger.info(f"wrote {len(written)} artifacts to {out_dir}")
    return written
