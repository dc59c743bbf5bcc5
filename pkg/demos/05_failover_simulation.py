"""
Failure replay and graceful degradation
=======================================

Two upstreams on their own servers, the combiner on a third.  Heartbeats land
every 5 time units and a server is deemed down after 2 missed beats.  When the
combiner's host dies mid-trace, requests fall back to a singleton exit instead
of failing; when it returns, the pair resumes.  The sequential split of the
original model is the latency baseline throughout.
"""

import numpy as np

from melkit import (
    ClusterScenario,
    FailureTrace,
    LatencyModel,
    ModelPart,
    PlacementPlan,
    ServerSpec,
    simulate,
)

servers = [ServerSpec("s1", 10.0), ServerSpec("s2", 10.0), ServerSpec("s3", 10.0)]
parts = [
    ModelPart("upstream:1", "upstream", 2.0, index=1, blocks=2),
    ModelPart("upstream:2", "upstream", 2.0, index=2, blocks=2),
    ModelPart("downstream:1+2", "downstream", 1.0, members=(1, 2)),
]
stages = [ModelPart(f"stage:{j}", "stage", 3.0, index=j) for j in range(2)]
latency = LatencyModel(
    bandwidth=1.0,
    rtt=0.0,
    work={
        "upstream:1": 1.0, "upstream:2": 1.0, "exit:1": 1.0, "exit:2": 1.0,
        "downstream:1+2": 1.0, "stage:0": 2.0, "stage:1": 2.0,
    },
    rep_size={"upstream:1": 1.0, "upstream:2": 1.0, "stage:0": 1.0},
)

# The combiner host goes dark from t=100 to t=200.
scenario = ClusterScenario(
    servers=servers,
    ensemble_parts=parts,
    split_stages=stages,
    latency=latency,
    trace=FailureTrace(5.0, 2.0, ((100.0, "s3", "down"), (200.0, "s3", "up"))),
    request_times=tuple(float(t) for t in np.arange(0.0, 300.0, 20.0)),
    placement=PlacementPlan({"upstream:1": "s1", "upstream:2": "s2", "downstream:1+2": "s3"}),
    stage_assignment={"stage:0": "s1", "stage:1": "s2"},
)

result = simulate(scenario)
print(f"{'time':>6} {'subset':>7} {'latency':>8}")
for r in result.records:
    subset = r.subset.key() if r.subset else "-"
    lat = f"{r.latency_ms:.1f}" if r.latency_ms is not None else "-"
    print(f"{r.time:>6.0f} {subset:>7} {lat:>8}")

s = result.summary
print(f"\nserved {s['served']}/{s['requests']} requests; subset usage {s['subset_usage']}")
print(f"ensemble latency mean {s['ensemble_latency_ms']['mean']:.2f} vs split baseline {s['split_latency_ms']:.2f}")

# Availability comes from redundancy, not luck: with the same trace hitting an
# upstream host instead, the other upstream's exit covers the outage.
upstream_outage = ClusterScenario(
    servers=servers,
    ensemble_parts=parts,
    split_stages=stages,
    latency=latency,
    trace=FailureTrace(5.0, 2.0, ((100.0, "s1", "down"), (200.0, "s1", "up"))),
    request_times=scenario.request_times,
    placement=scenario.placement,
    stage_assignment=scenario.stage_assignment,
)
other = simulate(upstream_outage)
print(f"upstream outage instead: served {other.summary['served']}/{other.summary['requests']}, "
      f"usage {other.summary['subset_usage']}")
