"""CSV / NDJSON emission and parsing of run artifacts."""
import csv
import json
from pathlib import Path

import numpy as np

from .dynamics import MomentRecord
from .singular_operator import DipoleSet

MOMENT_COLUMNS = ("t", "M", "Dx", "Dy", "Dz", "D1x", "D1y", "D1z", "D2x", "D2y", "D2z",
                  "D3x", "D3y", "D3z", "Ekin", "Efield", "Eschott", "maxx", "maxp")


def fmt(v):
    """17 significant digits, enough to round-trip any double."""
    return format(float(v), ".17g")


def _open(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_table(path, header, rows):
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) and not isinstance(v, bool) else fmt(v) for v in row])


def write_moments(records, path):
    write_table(path, MOMENT_COLUMNS, (r.row() for r in records))


def read_moments(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != MOMENT_COLUMNS:
            raise ValueError(f"{path}: unexpected moments header {header}")
        out = []
        for row in reader:
            v = [float(x) for x in row]
            dip = DipoleSet(np.array(v[2:5]), np.array(v[5:8]), np.array(v[8:11]), np.array(v[11:14]), v[0])
            out.append(MomentRecord(v[0], v[1], dip, v[14], v[15], v[16], v[17], v[18]))
        return out


def write_checks(results, path):
    with _open(path) as fh:
        for r in results:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_checks(path):
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_picard(report, path):
    write_table(path, ("n", "alpha", "field_diff", "d3_diff"), report.rows())


def write_envelope(envelope, T, path, count=101):
    """(t, P, X) table plus a JSON sidecar with a and the constants."""
    t, P, X = envelope.table(T, count)
    write_table(path, ("t", "P", "X"), zip(t, P, X))
    meta = {"a": envelope.a, "R0": envelope.R0, "C1": envelope.C1, "C2": envelope.C2, "C3": envelope.C3}
    Path(path).with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")


def emit_outputs(records, reports, out_dir):
    out = Path(out_dir)
    write_moments(records, out / "moments.csv")
    write_checks(reports, out / "checks.ndjson")
