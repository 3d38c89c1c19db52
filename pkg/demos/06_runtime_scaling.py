"""Offline vs online cost and the quadratic scaling of pair scoring.

Times feature extraction (offline, per video) and pair scoring (online,
per pair) over a frame-count grid, then fits the online growth exponent;
doubling the frame count should roughly quadruple the scoring time.
"""

from vidsim.evaluation import benchmark

report = benchmark([(64, 2), (128, 2), (256, 2), (128, 1), (128, 3)],
                   repeats=5, seed=0)
print(report.to_csv())

times = {(r.frames, r.level): r.online_seconds for r in report.rows}
print(f"online 64->128 frames:  x{times[(128, 2)] / times[(64, 2)]:.2f}")
print(f"online 128->256 frames: x{times[(256, 2)] / times[(128, 2)]:.2f}")
print(f"online level 1 -> 3 at 128 frames: x{times[(128, 3)] / times[(128, 1)]:.2f}")
print(f"fitted online growth exponent over frames: {report.growth_exponent:.2f}")
