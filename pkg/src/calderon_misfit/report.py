"""Deterministic report emission: canonical JSON and CSV, atomic writes.

Reports never contain wall-clock data (timings go to standard error), so
a fixed seed and configuration produce byte-identical files regardless of
worker count or run.
"""

import json
import os
import tempfile


def canonical_json(obj):
    """Sorted-key JSON with shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=1,
                      separators=(",", ": ")) + "\n"


def csv_text(rows):
    out = []
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(f"{v:.17g}")
            else:
                cells.append(str(v))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def atomic_write_text(path, text):
    """Write via a temp file and rename; interrupted runs leave nothing."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(out_dir, stem, payload, formats=("json",), csv_rows=None):
    """Emit payload as <stem>.json and optionally <stem>.csv."""
    paths = []
    if "json" in formats:
        p = os.path.join(out_dir, f"{stem}.json")
        atomic_write_text(p, canonical_json(payload))
        paths.append(p)
    if "csv" in formats and csv_rows is not None:
        p = os.path.join(out_dir, f"{stem}.csv")
        atomic_write_text(p, csv_text(csv_rows))
        paths.append(p)
    return paths
