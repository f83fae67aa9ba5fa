"""
Full R sweep with reports
=========================

Run the correspondence pipeline from a config file, fit the correction
constant c and write CSV, JSON and SVG outputs. Equivalent to
``python -m qcsmooth correspondence --config configs/harmonic.json --out out``.
"""
import sys
from pathlib import Path

from qcsmooth import RunConfig, emit_report, run_correspondence, run_escape_scaling

root = Path(__file__).resolve().parents[1]
config = RunConfig.load(sys.argv[1] if len(sys.argv) > 1 else root / "configs" / "harmonic.json")
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")

report = run_correspondence(config, log=print)
escape = run_escape_scaling(config)
for path in emit_report(report, out, config, escape=escape):
    print("wrote", path)

print(f"fitted c = {report.c:.5f}; C0/(1+c/R) <= Q0 <= C0(1+c/R) on every row: {report.inequalities_pass}")
print(f"occupation-time slope {escape.slope:.4f}")
