"""
Deployment families and bin packing
===================================

Before anything is trained, enumerate which ensembles fit the fleet at all:
cross upstream prefix depths with combiner architectures, price each candidate
in parameters, and filter by budget.  Then pack the winning candidate's parts
onto servers with best-fit (or worst-fit) decreasing.
"""

from melkit import ModelPart, ServerSpec, best_fit_place, ensemble_family, small_spec
from melkit.failover import spec_param_count
from melkit.ensemble import all_subsets, symmetric_spec

# Candidates: one, two, or three trunk blocks, crossed with a plain concat
# combiner or one with a hidden layer.
entries = ensemble_family(
    block_widths=(16, 16, 8),
    downstream_options=[("concat", ()), ("hidden32", (32,))],
    budget=2200,
    num_upstreams=2,
    input_dim=16,
    num_classes=16,
)
print(f"{'blocks':>6} {'option':<10} {'demand':>7} feasible")
for e in entries:
    print(f"{e.blocks:>6} {e.option:<10} {e.demand:>7} {'yes' if e.feasible else 'no'}")

# Pick the deepest feasible candidate and split it into placeable parts.
best = max((e for e in entries if e.feasible), key=lambda e: (e.blocks, e.demand))
print(f"\nchosen: {best.blocks} blocks with the {best.option} combiner ({best.demand} parameters)")

widths = (16, 16, 8)[: best.blocks]
classes = {s: 16 for s in all_subsets(2)}
hidden = () if best.option == "concat" else (32,)
spec = symmetric_spec(16, 2, widths, classes, (), hidden)
per_upstream = spec_param_count(small_spec(spec))  # one trunk plus its exit head
combiner = best.demand - 2 * per_upstream

parts = [
    ModelPart("upstream:1", "upstream", per_upstream, index=1, blocks=best.blocks),
    ModelPart("upstream:2", "upstream", per_upstream, index=2, blocks=best.blocks),
    ModelPart("downstream:1+2", "downstream", combiner, members=(1, 2)),
]
servers = [ServerSpec("edge-a", 1200.0), ServerSpec("edge-b", 1200.0), ServerSpec("hub", 400.0)]

# best-fit keeps parts snug, worst-fit spreads them out; both respect capacity.
for policy in ("best-fit", "worst-fit"):
    plan = best_fit_place(parts, servers, policy=policy)
    used = {s.id: 0.0 for s in servers}
    for part in parts:
        used[plan.assignment[part.key]] += part.demand
    layout = ", ".join(f"{sid}={int(load)}" for sid, load in used.items())
    print(f"{policy}: {plan.assignment}  loads: {layout}")
