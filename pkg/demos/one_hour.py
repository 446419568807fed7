"""Six closed-loop steps (one hour) of nominal and optimized operation."""

import logging

from dhnflex import harness
from dhnflex.scenario import reference_scenario

logging.basicConfig(level=logging.INFO, format="%(message)s")

sc = reference_scenario(seed=0)
nominal = harness.run_nominal(sc, 6)
optimized = harness.run_optimized(sc, 6)
rep = harness.compare(nominal, optimized)

print(f"bypass   {rep.nominal_bypass_kg:9.0f} kg -> {rep.optimized_bypass_kg:9.0f} kg ({rep.reduction:.1%} less)")
print(f"supplied mass ratio {rep.supply_ratio:.3f}")
print(f"largest temperature deviation {rep.max_deviation_k:.3f} K")
