"""Hiring tree over the external line protocol."""
import sys

for line in sys.stdin:
    x = dict(kv.split("=") for kv in line.strip().split(","))
    col_rank, years_exp = float(x["col_rank"]), float(x["years_exp"])
    hire = col_rank <= 5 or years_exp > 5
    sys.stdout.write("1\n" if hire else "0\n")
    sys.stdout.flush()
