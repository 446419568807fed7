"""Bypass cost of each subsystem against its pressure drop at 08:00."""

import numpy as np

from dhnflex import harness
from dhnflex.scenario import reference_scenario

T = 8 * 3600.0

sc = reference_scenario(seed=0)
h = harness.build_hierarchy(sc)
plant = harness.Plant(sc)
plant.initialize(np.array([b.demand.at(T) for b in sc.buildings]), sc.boundary(T), T)
cands = sc.config.candidates()

for j, sub in enumerate(h.user_subsystems):
    inp = harness.local_inputs(sc, h, j, plant.state.temperatures, sc.buildings, T)
    tab = harness._sweep((inp, cands))
    costs = tab.costs
    ok = np.isfinite(costs)
    if not ok.any():
        print(f"subsystem {sub.id}: no feasible pressure drop")
        continue
    k = int(np.nanargmin(costs))
    print(
        f"subsystem {sub.id}: feasible for {ok.sum()}/{len(cands)} drops, "
        f"cheapest {costs[k]:.1f} kg bypassed at {cands[k]:.2f} Pa"
    )
