"""Serving-side planning and failure simulation for subset-indexed ensembles.

Covers four concerns: enumerating deployable ensemble sizes under a parameter
budget, packing model parts onto servers, deciding which subset can still
serve from heartbeat-derived liveness, and replaying request timelines to
compare parallel-ensemble latency with a sequential split of the original
model.

Time is in milliseconds; work is in abstract units divided by a server's
compute rate; a transfer costs size / bandwidth + RTT per hop.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .ensemble import EnsembleSpec, SubsetId, subset_sort_key, symmetric_spec

SCENARIO_FORMAT = "melkit-scenario"
SCENARIO_VERSION = 1


class PlacementError(RuntimeError):
    """No server can host a required model part."""


@dataclass(frozen=True)
class ServerSpec:
    id: str
    capacity: float
    compute_rate: float = 1.0

    def __post_init__(self):
        if self.capacity < 0.0 or self.compute_rate <= 0.0:
            raise ValueError(f"server {self.id}: capacity must be >= 0 and rate > 0")


@dataclass(frozen=True)
class ModelPart:
    """A placeable unit: one upstream (with its exit head), one combiner, or one stage."""

    key: str
    kind: str
    demand: float
    index: int = 0
    members: tuple[int, ...] = ()
    blocks: int = 0

    def __post_init__(self):
        if self.kind not in ("upstream", "downstream", "stage"):
            raise ValueError(f"unknown part kind {self.kind!r}")
        if self.demand < 0.0:
            raise ValueError(f"part {self.key}: demand must be non-negative")


@dataclass
class PlacementPlan:
    """Part key to server id; never exceeds any server's capacity."""

    assignment: dict[str, str]

    def validate(self, parts: Sequence[ModelPart], servers: Sequence[ServerSpec]) -> None:
        by_id = {s.id: s for s in servers}
        load: dict[str, float] = {s.id: 0.0 for s in servers}
        for part in parts:
            host = self.assignment.get(part.key)
            if host is None:
                raise PlacementError(f"part {part.key} is unplaced")
            if host not in by_id:
                raise PlacementError(f"part {part.key} placed on unknown server {host}")
            load[host] += part.demand
        for sid, used in load.items():
            if used > by_id[sid].capacity + 1e-9:
                raise PlacementError(f"server {sid} over capacity: {used} > {by_id[sid].capacity}")


def best_fit_place(
    parts: Sequence[ModelPart],
    servers: Sequence[ServerSpec],
    policy: str = "best-fit",
) -> PlacementPlan:
    """Pack parts in decreasing demand order.

    best-fit picks the feasible server left with the least slack; worst-fit
    picks the one left with the most.  Ties keep server declaration order.
    """
    if policy not in ("best-fit", "worst-fit"):
        raise ValueError(f"policy must be best-fit or worst-fit, got {policy!r}")
    remaining = {s.id: s.capacity for s in servers}
    order = [s.id for s in servers]
    assignment: dict[str, str] = {}
    for part in sorted(parts, key=lambda p: (-p.demand, p.key)):
        fits = [sid for sid in order if remaining[sid] >= part.demand]
        if not fits:
            raise PlacementError(f"no server fits part {part.key} (demand {part.demand})")
        if policy == "best-fit":
            chosen = min(fits, key=lambda sid: remaining[sid])
        else:
            chosen = max(fits, key=lambda sid: remaining[sid])
        assignment[part.key] = chosen
        remaining[chosen] -= part.demand
    plan = PlacementPlan(assignment)
    plan.validate(parts, servers)
    return plan


@dataclass(frozen=True)
class FamilyEntry:
    """One candidate deployment: prefix depth, combiner option, demand, fit."""

    blocks: int
    option: str
    demand: int
    feasible: bool


def spec_param_count(spec: EnsembleSpec) -> int:
    """Parameter total implied by a spec, without building the model."""
    total = 0
    for widths in spec.upstream_widths:
        dims = (spec.input_dim, *widths)
        total += sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    for s in spec.subsets:
        in_width = spec.rep_width(s.members[0]) if len(s) == 1 else spec.combiner_input_width(s)
        dims = (in_width, *spec.head_hidden(s), spec.num_classes[s])
        total += sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    return total


def ensemble_family(
    block_widths: Sequence[int],
    downstream_options: Sequence[tuple[str, Sequence[int]]],
    budget: float,
    num_upstreams: int = 2,
    input_dim: int = 16,
    num_classes: int = 16,
    feasible: Callable[[int, str, int], bool] | None = None,
) -> list[FamilyEntry]:
    """Enumerate upstream prefix depths crossed with combiner options.

    Upstreams take the first b widths of ``block_widths``; every subset of two
    or more upstreams gets a combiner of the given hidden shape.  The default
    feasibility test compares total parameter demand against ``budget``;
    ``feasible(blocks, option, demand)`` replaces it when provided.
    """
    if not block_widths or any(w < 1 for w in block_widths):
        raise ValueError("block_widths must be positive")
    if not downstream_options:
        raise ValueError("need at least one downstream option")
    if num_upstreams < 2:
        raise ValueError("a family needs at least two upstreams")
    entries: list[FamilyEntry] = []
    from .ensemble import all_subsets

    classes = {s: num_classes for s in all_subsets(num_upstreams)}
    for b in range(1, len(block_widths) + 1):
        widths = tuple(block_widths[:b])
        for tag, hidden in downstream_options:
            spec = symmetric_spec(input_dim, num_upstreams, widths, classes, (), tuple(hidden))
            demand = spec_param_count(spec)
            ok = feasible(b, tag, demand) if feasible is not None else demand <= budget
            entries.append(FamilyEntry(blocks=b, option=tag, demand=demand, feasible=ok))
    return entries


@dataclass(frozen=True)
class FailureTrace:
    """Down/up events per server; every server starts up at time 0.

    A live server emits heartbeats at multiples of ``heartbeat_interval``,
    including the instant it fails; it is deemed down at time t exactly when
    no heartbeat landed in (t - interval * timeout_multiplier, t].
    """

    heartbeat_interval: float
    timeout_multiplier: float
    events: tuple[tuple[float, str, str], ...] = ()

    def __post_init__(self):
        if self.heartbeat_interval <= 0.0 or self.timeout_multiplier < 1.0:
            raise ValueError("need interval > 0 and multiplier >= 1")
        last_time = -math.inf
        state: dict[str, str] = {}
        for t, server, kind in self.events:
            if kind not in ("down", "up"):
                raise ValueError(f"event kind must be down or up, got {kind!r}")
            if t < 0.0 or t < last_time:
                raise ValueError("events must be time-sorted and non-negative")
            last_time = t
            prev = state.get(server, "up")
            if prev == kind:
                raise ValueError(f"server {server} gets consecutive {kind} events")
            state[server] = kind

    def up_intervals(self, server: str, horizon: float) -> list[tuple[float, float]]:
        """Closed intervals within [0, horizon] during which the server is up."""
        spans: list[tuple[float, float]] = []
        start = 0.0
        up = True
        for t, sid, kind in self.events:
            if sid != server or t > horizon:
                continue
            if kind == "down" and up:
                spans.append((start, t))
                up = False
            elif kind == "up" and not up:
                start = t
                up = True
        if up:
            spans.append((start, horizon))
        return spans

    def last_heartbeat(self, server: str, now: float) -> float | None:
        """Latest heartbeat grid instant at or before ``now`` while the server was up."""
        best: float | None = None
        for a, b in self.up_intervals(server, now):
            g = math.floor(b / self.heartbeat_interval) * self.heartbeat_interval
            if g >= a and (best is None or g > best):
                best = g
        return best

    def deemed_up(self, server: str, now: float) -> bool:
        beat = self.last_heartbeat(server, now)
        return beat is not None and beat > now - self.heartbeat_interval * self.timeout_multiplier

    def truly_up(self, server: str, now: float) -> bool:
        up = True
        for t, sid, kind in self.events:
            if sid != server or t > now:
                continue
            up = kind == "up"
        return up


def detect_failures(trace: FailureTrace, servers: Sequence[str], now: float) -> dict[str, bool]:
    """Heartbeat-derived liveness per server at ``now`` (True means deemed up)."""
    if now < 0.0:
        raise ValueError("query time must be non-negative")
    return {sid: trace.deemed_up(sid, now) for sid in servers}


@dataclass(frozen=True)
class LatencyModel:
    """Compute work per part key plus a shared size/bandwidth + RTT transfer cost."""

    bandwidth: float
    rtt: float
    work: Mapping[str, float]
    rep_size: Mapping[str, float]

    def __post_init__(self):
        if self.bandwidth <= 0.0 or self.rtt < 0.0:
            raise ValueError("need bandwidth > 0 and rtt >= 0")

    def transfer_ms(self, part_key: str) -> float:
        return self.rep_size.get(part_key, 0.0) / self.bandwidth + self.rtt

    def compute_ms(self, part_key: str, rate: float) -> float:
        return self.work.get(part_key, 0.0) / rate


def select_active_subset(
    parts: Sequence[ModelPart],
    placement: PlacementPlan,
    deemed_up: Mapping[str, bool],
) -> SubsetId | None:
    """Largest fully-alive subset whose combiner host is alive.

    Size ties break lexicographically.  With no viable combiner, fall back to
    the alive upstream with the most blocks (ties to the smallest index); with
    no alive upstream at all, return None.
    """
    upstreams = {p.index: p for p in parts if p.kind == "upstream"}
    alive_upstream = {
        i: deemed_up.get(placement.assignment[p.key], False) for i, p in upstreams.items()
    }
    candidates: list[SubsetId] = []
    for p in parts:
        if p.kind != "downstream":
            continue
        host_ok = deemed_up.get(placement.assignment[p.key], False)
        if host_ok and all(alive_upstream.get(i, False) for i in p.members):
            candidates.append(SubsetId(p.members))
    if candidates:
        return min(candidates, key=lambda s: (-len(s), s.members))
    singles = [i for i, ok in alive_upstream.items() if ok]
    if singles:
        best = min(singles, key=lambda i: (-upstreams[i].blocks, i))
        return SubsetId.of(best)
    return None


def ensemble_latency(
    subset: SubsetId,
    parts: Sequence[ModelPart],
    placement: PlacementPlan,
    servers: Sequence[ServerSpec],
    latency: LatencyModel,
) -> float:
    """Parallel serving latency: slowest branch (compute + transfer) plus combine.

    A singleton answers from its exit head on the upstream's server with no
    network hop.  Transfers are charged per branch regardless of co-location.
    """
    rate = {s.id: s.compute_rate for s in servers}
    up_key = {p.index: p.key for p in parts if p.kind == "upstream"}
    if len(subset) == 1:
        i = subset.members[0]
        host_rate = rate[placement.assignment[up_key[i]]]
        return latency.compute_ms(up_key[i], host_rate) + latency.compute_ms(f"exit:{i}", host_rate)
    branches = []
    for i in subset.members:
        host_rate = rate[placement.assignment[up_key[i]]]
        branches.append(latency.compute_ms(up_key[i], host_rate) + latency.transfer_ms(up_key[i]))
    down_key = f"downstream:{subset.key()}"
    down_rate = rate[placement.assignment[down_key]]
    return max(branches) + latency.compute_ms(down_key, down_rate)


def split_latency(
    stages: Sequence[ModelPart],
    stage_assignment: Mapping[str, str],
    servers: Sequence[ServerSpec],
    latency: LatencyModel,
) -> float:
    """Sequential latency of the split original model: stage computes plus hops."""
    if len(stages) < 2:
        raise ValueError("a split deployment needs at least two stages")
    rate = {s.id: s.compute_rate for s in servers}
    ordered = sorted(stages, key=lambda p: p.index)
    total = 0.0
    for j, stage in enumerate(ordered):
        total += latency.compute_ms(stage.key, rate[stage_assignment[stage.key]])
        if j < len(ordered) - 1:
            total += latency.transfer_ms(stage.key)
    return total


@dataclass(frozen=True)
class RequestRecord:
    time: float
    subset: SubsetId | None
    latency_ms: float | None
    served: bool


@dataclass
class SimulationResult:
    records: list[RequestRecord]
    summary: dict

    def served_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(1 for r in self.records if r.served) / len(self.records)


@dataclass
class ClusterScenario:
    """Everything the simulator needs: fleet, parts, costs, failures, requests."""

    servers: list[ServerSpec]
    ensemble_parts: list[ModelPart]
    split_stages: list[ModelPart]
    latency: LatencyModel
    trace: FailureTrace
    request_times: tuple[float, ...]
    placement: PlacementPlan | None = None
    placement_policy: str = "best-fit"
    stage_assignment: dict[str, str] = field(default_factory=dict)

    def resolved_placement(self) -> PlacementPlan:
        if self.placement is not None:
            self.placement.validate(self.ensemble_parts, self.servers)
            return self.placement
        return best_fit_place(self.ensemble_parts, self.servers, self.placement_policy)

    def resolved_stage_assignment(self) -> dict[str, str]:
        if self.stage_assignment:
            return dict(self.stage_assignment)
        ordered = sorted(self.split_stages, key=lambda p: p.index)
        return {p.key: self.servers[j % len(self.servers)].id for j, p in enumerate(ordered)}


def simulate(scenario: ClusterScenario) -> SimulationResult:
    """Replay the request timeline against heartbeat-deemed liveness.

    Each request picks the best currently-viable subset and records its
    parallel-ensemble latency; the sequential-split latency of the original
    model is reported alongside as a fixed comparison point.
    """
    placement = scenario.resolved_placement()
    server_ids = [s.id for s in scenario.servers]
    records: list[RequestRecord] = []
    usage: dict[str, int] = {}
    for t in scenario.request_times:
        alive = detect_failures(scenario.trace, server_ids, t)
        subset = select_active_subset(scenario.ensemble_parts, placement, alive)
        if subset is None:
            records.append(RequestRecord(time=t, subset=None, latency_ms=None, served=False))
            continue
        lat = ensemble_latency(subset, scenario.ensemble_parts, placement, scenario.servers, scenario.latency)
        usage[subset.key()] = usage.get(subset.key(), 0) + 1
        records.append(RequestRecord(time=t, subset=subset, latency_ms=lat, served=True))

    served = [r.latency_ms for r in records if r.served]
    split_ms = split_latency(scenario.split_stages, scenario.resolved_stage_assignment(), scenario.servers, scenario.latency)
    summary = {
        "requests": len(records),
        "served": len(served),
        "served_fraction": (len(served) / len(records)) if records else 0.0,
        "ensemble_latency_ms": _latency_stats(served),
        "split_latency_ms": split_ms,
        "subset_usage": {k: usage[k] for k in sorted(usage, key=lambda key: subset_sort_key(SubsetId.parse(key)))},
        "placement": dict(sorted(placement.assignment.items())),
    }
    return SimulationResult(records=records, summary=summary)


def _latency_stats(values: list[float]) -> dict:
    if not values:
        return {"mean": None, "max": None}
    return {"mean": sum(values) / len(values), "max": max(values)}


def save_records_csv(records: Sequence[RequestRecord], path: str | Path) -> None:
    """Request log as CSV rows of (time, subset, latency_ms, served)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "subset", "latency_ms", "served"])
        for r in records:
            writer.writerow(
                [
                    repr(r.time),
                    r.subset.key() if r.subset is not None else "",
                    repr(r.latency_ms) if r.latency_ms is not None else "",
                    "true" if r.served else "false",
                ]
            )


def scenario_to_json(scenario: ClusterScenario) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "servers": [{"id": s.id, "capacity": s.capacity, "compute_rate": s.compute_rate} for s in scenario.servers],
        "ensemble": {
            "upstreams": [
                {
                    "index": p.index,
                    "demand": p.demand,
                    "blocks": p.blocks,
                    "work": scenario.latency.work.get(p.key, 0.0),
                    "exit_work": scenario.latency.work.get(f"exit:{p.index}", 0.0),
                    "rep_size": scenario.latency.rep_size.get(p.key, 0.0),
                }
                for p in scenario.ensemble_parts
                if p.kind == "upstream"
            ],
            "downstreams": [
                {
                    "members": list(p.members),
                    "demand": p.demand,
                    "work": scenario.latency.work.get(p.key, 0.0),
                }
                for p in scenario.ensemble_parts
                if p.kind == "downstream"
            ],
        },
        "split_stages": [
            {
                "index": p.index,
                "demand": p.demand,
                "work": scenario.latency.work.get(p.key, 0.0),
                "rep_size": scenario.latency.rep_size.get(p.key, 0.0),
            }
            for p in sorted(scenario.split_stages, key=lambda p: p.index)
        ],
        "latency": {"bandwidth": scenario.latency.bandwidth, "rtt": scenario.latency.rtt},
        "failures": {
            "heartbeat_interval": scenario.trace.heartbeat_interval,
            "timeout_multiplier": scenario.trace.timeout_multiplier,
            "events": [[t, sid, kind] for t, sid, kind in scenario.trace.events],
        },
        "placement": dict(scenario.placement.assignment) if scenario.placement is not None else "auto",
        "placement_policy": scenario.placement_policy,
        "stage_placement": dict(scenario.stage_assignment) if scenario.stage_assignment else "round-robin",
        "requests": list(scenario.request_times),
    }


def scenario_from_json(doc: dict) -> ClusterScenario:
    if doc.get("format") != SCENARIO_FORMAT:
        raise ValueError(f"not a {SCENARIO_FORMAT} document")
    if doc.get("version") != SCENARIO_VERSION:
        raise ValueError(f"unsupported scenario version {doc.get('version')}")
    servers = [ServerSpec(s["id"], float(s["capacity"]), float(s.get("compute_rate", 1.0))) for s in doc["servers"]]
    work: dict[str, float] = {}
    rep: dict[str, float] = {}
    parts: list[ModelPart] = []
    for u in doc["ensemble"]["upstreams"]:
        key = f"upstream:{int(u['index'])}"
        parts.append(ModelPart(key=key, kind="upstream", demand=float(u["demand"]), index=int(u["index"]), blocks=int(u.get("blocks", 0))))
        work[key] = float(u.get("work", 0.0))
        work[f"exit:{int(u['index'])}"] = float(u.get("exit_work", 0.0))
        rep[key] = float(u.get("rep_size", 0.0))
    for d in doc["ensemble"]["downstreams"]:
        members = tuple(int(i) for i in d["members"])
        key = f"downstream:{SubsetId(members).key()}"
        parts.append(ModelPart(key=key, kind="downstream", demand=float(d["demand"]), members=members))
        work[key] = float(d.get("work", 0.0))
    stages: list[ModelPart] = []
    for s in doc["split_stages"]:
        key = f"stage:{int(s['index'])}"
        stages.append(ModelPart(key=key, kind="stage", demand=float(s.get("demand", 0.0)), index=int(s["index"])))
        work[key] = float(s.get("work", 0.0))
        rep[key] = float(s.get("rep_size", 0.0))
    latency = LatencyModel(
        bandwidth=float(doc["latency"]["bandwidth"]),
        rtt=float(doc["latency"].get("rtt", 0.0)),
        work=work,
        rep_size=rep,
    )
    fail = doc["failures"]
    trace = FailureTrace(
        heartbeat_interval=float(fail["heartbeat_interval"]),
        timeout_multiplier=float(fail["timeout_multiplier"]),
        events=tuple((float(t), str(sid), str(kind)) for t, sid, kind in fail.get("events", [])),
    )
    placement_doc = doc.get("placement", "auto")
    placement = PlacementPlan(dict(placement_doc)) if isinstance(placement_doc, dict) else None
    stage_doc = doc.get("stage_placement", "round-robin")
    stage_assignment = dict(stage_doc) if isinstance(stage_doc, dict) else {}
    return ClusterScenario(
        servers=servers,
        ensemble_parts=parts,
        split_stages=stages,
        latency=latency,
        trace=trace,
        request_times=tuple(float(t) for t in doc.get("requests", [])),
        placement=placement,
        placement_policy=str(doc.get("placement_policy", "best-fit")),
        stage_assignment=stage_assignment,
    )


def load_scenario(path: str | Path) -> ClusterScenario:
    return scenario_from_json(json.loads(Path(path).read_text()))


def save_scenario(scenario: ClusterScenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(scenario), indent=1, sort_keys=True))
