"""
Traces, verification and the command line
=========================================

Runs a preset through the CLI with a per-slot trace, then has ``analyze``
recompute potential, collisions and stability from the CSV. Damaging one cell
makes it report the first row that disagrees.
"""
import csv
import tempfile
from pathlib import Path

from dsoc.cli import main

out = Path(tempfile.mkdtemp()) / "run"
main(["presets"])
main(["run", "--preset", "dynamic-sparse", "--reps", "1", "--trace", "--out", str(out)])
rep = out / "rep_0000"
print("analyze exit code:", main(["analyze", str(rep / "trace.csv"), str(rep / "matrix.json")]))

# flip one reward and check again
with open(rep / "trace.csv", newline="") as fh:
    rows = list(csv.reader(fh))
col = rows[0].index("reward")
row = next(n for n, r in enumerate(rows) if n > 5000 and r[col] in ("0", "1"))
rows[row][col] = "1" if rows[row][col] == "0" else "0"
with open(rep / "trace.csv", "w", newline="") as fh:
    csv.writer(fh, lineterminator="\n").writerows(rows)
print("after editing row", row, "->", main(["analyze", str(rep / "trace.csv"), str(rep / "matrix.json")]))
