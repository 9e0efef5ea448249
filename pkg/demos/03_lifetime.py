"""
Recall efficiency versus storage time and the no-cloning threshold.

Decoherence during storage shrinks the echo; a Gaussian decay law
fits the sweep and tells how long the memory beats 50% efficiency.

    python3 demos/03_lifetime.py     (about 10 s)
"""

from gemsim import memory
from gemsim.scenario import load_scenario

sc = load_scenario("paper")
runs = memory.storage_sweep(sc.memory_config(), sc.pulse(), sc.storage_times(), sc.timing(),
                            lower_from=sc.pulse("coherent"))
print(" storage    lower  reported   upper")
for t, r in runs:
    print(f"{t * 1e6:5.0f} us   {r.efficiency_lower:.3f}    {r.efficiency_reported:.3f}   {r.efficiency_upper:.3f}")

fit = memory.fit_decay([(t, r.efficiency_reported) for t, r in runs])
print(f"\nfit: eta0={fit.eta0:.3f}  tau={fit.tau * 1e6:.1f} us  p={fit.p}  max|res|={fit.max_abs_residual:.4f}")
cross = memory.threshold_crossing(fit, 0.5, runs[0][0], runs[-1][0])
print(f"efficiency stays above 0.5 until {cross * 1e6:.1f} us")
