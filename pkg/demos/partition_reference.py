"""Spectral partition of the reference network into five user subsystems."""

from dhnflex.partition import recursive_partition, reduce_graph
from dhnflex.scenario import reference_scenario

sc = reference_scenario(seed=0)
g = sc.graph
print(f"reference network: {g.n_nodes} nodes, {g.n_edges} edges, {len(g.user_edges)} users")

p = recursive_partition(g, 5)
for s in p.user_subsystems:
    print(f"  subsystem {s.id}: {s.n_users} users, {s.graph.n_edges} edges")
print(f"  pass-through pieces: {len(p.passthrough)}")

r = reduce_graph(p)
print(f"reduced graph: {len(r.nodes)} nodes, {len(r.user_edges)} subsystem edges, {len(r.passthrough_edges)} pipes")
