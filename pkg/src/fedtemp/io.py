"""CSV conventions shared by every emitted table."""

import csv

import numpy as np


def fmt(x) -> str:
    """9 significant digits, '.' decimal separator."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(x)
    return format(float(x), ".9g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
