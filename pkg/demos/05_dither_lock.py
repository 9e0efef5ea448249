"""
Keeping the pair source on its drifting resonance with a dither lock.

The controller only compares successive averaged count rates: it keeps
stepping while counts rise and turns around when they fall, with a step
proportional to the change and clamped to [step_min, step_max].

    python3 demos/05_dither_lock.py
"""

from dataclasses import replace

import numpy as np

from gemsim import lock
from gemsim.scenario import load_scenario

sc = load_scenario("paper")
land, params = sc.landscape(), sc.lock_params()
print(f"resonance linewidth {land.linewidth / 1e3:.0f} kHz, drift {land.drift_rate / 1e3:.0f} kHz/s")

# acquisition from half a linewidth off resonance
trace = lock.simulate_lock(land, params, 10_000, seed=0, start_offset=land.linewidth / 2)
for k in (0, 5, 10, 20, 50, 100, 200, 9999):
    print(f"update {k:5d}: offset {trace.offset[k] / 1e3:8.1f} kHz   peak {trace.peak[k] / 1e3:8.1f} kHz")
print(f"RMS tracking error after acquisition: {trace.rms_error(skip=200) / 1e3:.1f} kHz, "
      f"capture losses: {len(trace.capture_losses)}")

# longer averaging trades speed for a quieter lock point
static = replace(land, drift_rate=0.0)
for n in (5, 10, 20, 40):
    sd = np.mean([np.sqrt(lock.simulate_lock(static, replace(params, n_cycles=n), 1000, s).steady_state_variance(200))
                  for s in range(20)])
    print(f"n_cycles={n:3d}: steady-state spread {sd / 1e3:.1f} kHz")
