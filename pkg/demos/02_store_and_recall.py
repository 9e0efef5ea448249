"""
Writing, storing and recalling a heralded photon in the gradient echo memory.

The rising-exponential input is absorbed with the control on, the control
gates off at the herald, the gradient flips while it is off, and the echo
appears once the control returns.  Raising the bandwidth ratio (a wider
input spectrum than the memory accepts) pulls the echo earlier and
flattens its peak.

    python3 demos/02_store_and_recall.py
"""

import numpy as np

from gemsim import memory
from gemsim.scenario import load_scenario

sc = load_scenario("paper")
cfg, timing = sc.memory_config(), sc.timing()

for kind in ("coherent", "single_photon"):
    pulse = sc.pulse(kind)
    sched = timing.schedule(pulse.end, sc.storage_time())
    t_on = sched.events[3].time
    r = memory.run_protocol(cfg, pulse, sched)
    print(f"{kind:>14s}  ratio={pulse.bandwidth_ratio}  bandwidth={r.bandwidth / 1e6:.2f} MHz")
    print(f"{'':>14s}  efficiency reported={r.efficiency_reported:.3f}  upper={r.efficiency_upper:.3f}")
    print(f"{'':>14s}  10% of echo by {1e9 * (r.recalled_fraction_time(0.1) - t_on):.0f} ns after control-on, "
          f"peak power {r.peak_power():.3g}")
    print(f"{'':>14s}  energy bookkeeping closes to {r.bookkeeping_error:.1e}")

# crude text plot of the single-photon echo
t, p = r.trace("reported")
grid = np.linspace(t[0], t[0] + 1.5e-6, 16)
for ti, pi in zip(grid - t_on, memory.uniform_trace(r, grid)):
    print(f"{ti * 1e9:7.0f} ns |" + "#" * int(50 * pi / r.peak_power()))
