"""Subset-indexed ensembles: shared upstream feature blocks, per-upstream exit
heads, and one combiner head per subset of two or more upstreams.

A subset {i} runs upstream i plus its exit head only.  A subset S with |S| >= 2
concatenates the upstream representations in ascending index order and feeds a
combiner head.  Checkpoints round-trip through JSON bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .nn import BlockGraph, ShapeError, Tensor

CHECKPOINT_FORMAT = "melkit-checkpoint"
CHECKPOINT_VERSION = 1


class SpecError(ValueError):
    """An ensemble description is internally inconsistent."""


@dataclass(frozen=True, order=True)
class SubsetId:
    """Canonical, hashable identity of a non-empty subset of upstream indices."""

    members: tuple[int, ...]

    def __post_init__(self):
        m = tuple(self.members)
        if not m:
            raise ValueError("subset must be non-empty")
        if any(not isinstance(i, int) or i < 1 for i in m):
            raise ValueError(f"upstream indices must be integers >= 1, got {m}")
        if len(set(m)) != len(m):
            raise ValueError(f"duplicate upstream index in {m}")
        object.__setattr__(self, "members", tuple(sorted(m)))

    @classmethod
    def of(cls, *members: int) -> SubsetId:
        return cls(tuple(members))

    @classmethod
    def parse(cls, text: str) -> SubsetId:
        """Inverse of ``key()``: '1+3' -> SubsetId.of(1, 3)."""
        try:
            return cls(tuple(int(p) for p in text.split("+")))
        except ValueError as exc:
            raise ValueError(f"malformed subset key {text!r}") from exc

    def key(self) -> str:
        return "+".join(str(i) for i in self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __contains__(self, i: int) -> bool:
        return i in self.members

    def __str__(self) -> str:
        return "{" + ",".join(str(i) for i in self.members) + "}"


def subset_sort_key(s: SubsetId) -> tuple[int, tuple[int, ...]]:
    """Canonical ordering: singletons first, then pairs, ... lexicographic within size."""
    return (len(s.members), s.members)


def all_subsets(m: int, min_size: int = 1) -> list[SubsetId]:
    """Every subset of {1..m} with at least ``min_size`` members, canonically ordered."""
    from itertools import combinations

    out = [SubsetId(c) for k in range(min_size, m + 1) for c in combinations(range(1, m + 1), k)]
    return sorted(out, key=subset_sort_key)


@dataclass(frozen=True)
class EnsembleSpec:
    """Architecture of the whole ensemble.

    ``upstream_widths[i]`` lists layer widths for upstream i+1; its last entry is
    that upstream's representation width.  ``exit_hidden`` / ``downstream_hidden``
    list hidden widths of the heads (empty tuple means a single affine layer).
    ``num_classes`` gives the label-space size per subset.
    """

    input_dim: int
    upstream_widths: tuple[tuple[int, ...], ...]
    num_classes: Mapping[SubsetId, int]
    exit_hidden: tuple[tuple[int, ...], ...] = ()
    downstream_hidden: Mapping[SubsetId, tuple[int, ...]] = field(default_factory=dict)

    @property
    def num_upstreams(self) -> int:
        return len(self.upstream_widths)

    @property
    def subsets(self) -> list[SubsetId]:
        return all_subsets(self.num_upstreams)

    def rep_width(self, i: int) -> int:
        return self.upstream_widths[i - 1][-1]

    def combiner_input_width(self, s: SubsetId) -> int:
        return sum(self.rep_width(i) for i in s)

    def head_hidden(self, s: SubsetId) -> tuple[int, ...]:
        if len(s) == 1:
            hidden = self.exit_hidden[s.members[0] - 1] if self.exit_hidden else ()
        else:
            hidden = self.downstream_hidden.get(s, ())
        return tuple(hidden)

    def validate(self) -> None:
        m = self.num_upstreams
        if m < 1:
            raise SpecError("need at least one upstream")
        if self.input_dim < 1:
            raise SpecError(f"input_dim must be positive, got {self.input_dim}")
        for i, widths in enumerate(self.upstream_widths, start=1):
            if not widths or any(w < 1 for w in widths):
                raise SpecError(f"upstream {i} needs positive layer widths, got {widths}")
        if self.exit_hidden and len(self.exit_hidden) != m:
            raise SpecError(f"exit_hidden lists {len(self.exit_hidden)} heads for {m} upstreams")
        expected = set(all_subsets(m))
        got = set(self.num_classes)
        if got != expected:
            raise SpecError(f"num_classes must cover every subset of 1..{m}; missing {sorted(expected - got, key=subset_sort_key)}, extra {sorted(got - expected, key=subset_sort_key)}")
        for s, k in self.num_classes.items():
            if k < 2:
                raise SpecError(f"subset {s} needs at least 2 classes, got {k}")
        for s in self.downstream_hidden:
            if len(s) < 2 or not set(s.members) <= set(range(1, m + 1)):
                raise SpecError(f"downstream_hidden key {s} is not a valid multi-upstream subset")


def symmetric_spec(
    input_dim: int,
    num_upstreams: int,
    widths: Iterable[int],
    num_classes: Mapping[SubsetId, int],
    exit_hidden: Iterable[int] = (),
    downstream_hidden: Iterable[int] = (),
) -> EnsembleSpec:
    """Spec with identical upstream architectures and identical head shapes."""
    w = tuple(widths)
    return EnsembleSpec(
        input_dim=input_dim,
        upstream_widths=tuple(w for _ in range(num_upstreams)),
        num_classes=dict(num_classes),
        exit_hidden=tuple(tuple(exit_hidden) for _ in range(num_upstreams)),
        downstream_hidden={s: tuple(downstream_hidden) for s in all_subsets(num_upstreams, min_size=2)},
    )


class EnsembleModel:
    """Built ensemble: upstream graphs, exit heads, and combiner heads.

    Heads live in ``heads`` keyed by SubsetId; singleton keys are the exit
    heads.  Construction order is canonical so two specs that differ only in
    mapping insertion order produce identical parameters.
    """

    def __init__(self, spec: EnsembleSpec, upstreams: list[BlockGraph], heads: dict[SubsetId, BlockGraph], seed: int):
        self.spec = spec
        self.upstreams = upstreams
        self.heads = heads
        self.seed = seed

    @property
    def num_upstreams(self) -> int:
        return len(self.upstreams)

    @property
    def subsets(self) -> list[SubsetId]:
        return sorted(self.heads, key=subset_sort_key)

    def _check_subset(self, s: SubsetId) -> None:
        if s not in self.heads:
            raise KeyError(f"unknown subset {s}; model covers 1..{self.num_upstreams}")

    def upstream_rep_tensor(self, i: int, x: Tensor) -> Tensor:
        if not 1 <= i <= self.num_upstreams:
            raise KeyError(f"upstream index {i} outside 1..{self.num_upstreams}")
        return self.upstreams[i - 1].forward_tensor(x)

    def upstream_rep(self, i: int, x: np.ndarray) -> np.ndarray:
        """Representation produced by upstream i (1-based) for a batch or vector."""
        arr, vector = _promote(x)
        out = self.upstream_rep_tensor(i, Tensor(arr))
        return out.value[0] if vector else out.value

    def head_logits_tensor(self, s: SubsetId, rep_cache: dict[int, Tensor]) -> Tensor:
        """Logits for subset ``s`` given already-computed upstream representations."""
        self._check_subset(s)
        if len(s) == 1:
            feed = rep_cache[s.members[0]]
        else:
            from .nn import concat

            feed = concat([rep_cache[i] for i in s.members], axis=1)
        return self.heads[s].forward_tensor(feed)

    def forward_subset_tensor(self, s: SubsetId, x: Tensor) -> Tensor:
        cache = {i: self.upstream_rep_tensor(i, x) for i in s.members}
        return self.head_logits_tensor(s, cache)

    def forward_subset(self, s: SubsetId, x: np.ndarray) -> np.ndarray:
        """Logits of subset ``s``; only the members' upstreams are evaluated."""
        arr, vector = _promote(x)
        out = self.forward_subset_tensor(s, Tensor(arr))
        return out.value[0] if vector else out.value

    def predict(self, s: SubsetId, x: np.ndarray) -> np.ndarray:
        """Argmax class per row, lowest index winning ties."""
        logits = self.forward_subset(s, np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.argmax(logits, axis=1)

    def subset_parameters(self, s: SubsetId) -> list[Tensor]:
        self._check_subset(s)
        params: list[Tensor] = []
        for i in s.members:
            params.extend(self.upstreams[i - 1].parameters())
        params.extend(self.heads[s].parameters())
        return params

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for g in self.upstreams:
            params.extend(g.parameters())
        for s in self.subsets:
            params.extend(self.heads[s].parameters())
        return params

    def upstream_parameters(self) -> list[Tensor]:
        return [p for g in self.upstreams for p in g.parameters()]

    def head_parameters(self, min_size: int = 1) -> list[Tensor]:
        return [p for s in self.subsets if len(s) >= min_size for p in self.heads[s].parameters()]

    def param_count(self, s: SubsetId | None = None) -> int:
        """Parameters needed to serve subset ``s``, or the whole ensemble if None."""
        if s is None:
            return sum(p.value.size for p in self.parameters())
        return sum(p.value.size for p in self.subset_parameters(s))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path: str | Path) -> EnsembleModel:
        return load_checkpoint(path)


def _promote(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ShapeError(f"expected vector or batch, got shape {arr.shape}")


def build_ensemble(spec: EnsembleSpec, seed: int) -> EnsembleModel:
    """Deterministically initialize every graph from one seeded generator.

    Components are initialized in canonical order (upstreams ascending, then
    heads in subset order), so equal specs give bit-identical models.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    upstreams = [
        BlockGraph.build((spec.input_dim, *widths), rng, final_relu=True)
        for widths in spec.upstream_widths
    ]
    heads: dict[SubsetId, BlockGraph] = {}
    for s in spec.subsets:
        in_width = spec.rep_width(s.members[0]) if len(s) == 1 else spec.combiner_input_width(s)
        dims = (in_width, *spec.head_hidden(s), spec.num_classes[s])
        heads[s] = BlockGraph.build(dims, rng, final_relu=False)
    return EnsembleModel(spec, upstreams, heads, seed)


def _spec_to_json(spec: EnsembleSpec) -> dict:
    return {
        "input_dim": spec.input_dim,
        "upstream_widths": [list(w) for w in spec.upstream_widths],
        "num_classes": {s.key(): int(k) for s, k in sorted(spec.num_classes.items(), key=lambda kv: subset_sort_key(kv[0]))},
        "exit_hidden": [list(h) for h in spec.exit_hidden],
        "downstream_hidden": {s.key(): list(h) for s, h in sorted(spec.downstream_hidden.items(), key=lambda kv: subset_sort_key(kv[0]))},
    }


def _spec_from_json(obj: dict) -> EnsembleSpec:
    return EnsembleSpec(
        input_dim=int(obj["input_dim"]),
        upstream_widths=tuple(tuple(int(w) for w in ws) for ws in obj["upstream_widths"]),
        num_classes={SubsetId.parse(k): int(v) for k, v in obj["num_classes"].items()},
        exit_hidden=tuple(tuple(int(w) for w in ws) for ws in obj["exit_hidden"]),
        downstream_hidden={SubsetId.parse(k): tuple(int(w) for w in v) for k, v in obj["downstream_hidden"].items()},
    )


def _graph_to_json(graph: BlockGraph) -> dict:
    return {
        "weights": [w.value.tolist() for w in graph.weights],
        "biases": [b.value.tolist() for b in graph.biases],
        "relus": list(graph.relus),
    }


def _graph_from_json(obj: dict) -> BlockGraph:
    weights = [np.asarray(w, dtype=np.float64) for w in obj["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in obj["biases"]]
    return BlockGraph(weights, biases, [bool(r) for r in obj["relus"]])


def save_checkpoint(model: EnsembleModel, path: str | Path) -> None:
    """Write a JSON checkpoint; floats round-trip bit-exactly via repr."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "spec": _spec_to_json(model.spec),
        "upstreams": [_graph_to_json(g) for g in model.upstreams],
        "heads": {s.key(): _graph_to_json(model.heads[s]) for s in model.subsets},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path: str | Path) -> EnsembleModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    spec = _spec_from_json(doc["spec"])
    spec.validate()
    upstreams = [_graph_from_json(g) for g in doc["upstreams"]]
    heads = {SubsetId.parse(k): _graph_from_json(g) for k, g in doc["heads"].items()}
    model = EnsembleModel(spec, upstreams, heads, seed=int(doc.get("seed", -1)))
    _check_loaded_shapes(model)
    return model


def _check_loaded_shapes(model: EnsembleModel) -> None:
    spec = model.spec
    if len(model.upstreams) != spec.num_upstreams:
        raise SpecError("checkpoint upstream count disagrees with its spec")
    for i, g in enumerate(model.upstreams, start=1):
        if g.input_dim != spec.input_dim or g.output_dim != spec.rep_width(i):
            raise SpecError(f"upstream {i} shapes disagree with spec")
    for s in spec.subsets:
        if s not in model.heads:
            raise SpecError(f"checkpoint missing head for subset {s}")
        head = model.heads[s]
        want_in = spec.rep_width(s.members[0]) if len(s) == 1 else spec.combiner_input_width(s)
        if head.input_dim != want_in or head.output_dim != spec.num_classes[s]:
            raise SpecError(f"head {s} shapes disagree with spec")
