"""Problem instances for dynamic task assignment.

An instance bundles the activity labels, the resources with their weights,
the (label, resource) assignment pools with Gaussian completion models, the
label transition matrix, the hourly availability calendar, the case arrival
rate, and the episode horizon. Instances are immutable; simulations share
them freely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

KIND_START = "start"
KIND_END = "end"
KIND_REGULAR = "regular"
LABEL_KINDS = (KIND_START, KIND_END, KIND_REGULAR)

# Rows off by at most this are renormalized on load; worse sums are kept
# as-is so validation can reject them.
ROW_RENORM_TOL = 1e-6
# Validation tolerance for stochastic rows (post-renormalization).
ROW_SUM_TOL = 1e-9


class InstanceFormatError(ValueError):
    """Raised when an instance file is structurally malformed."""


class InstanceValidationError(ValueError):
    """Raised when a structurally valid instance breaks a model invariant."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        lines = "; ".join(f"{v.code}: {v.message}" for v in violations)
        super().__init__(f"invalid instance ({len(violations)} violations): {lines}")


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ActivityLabel:
    id: int
    name: str
    kind: str


@dataclass(frozen=True)
class Resource:
    id: int
    name: str
    weight: int


@dataclass(frozen=True)
class CompletionModel:
    """Parameters of the completion-time distribution for one pool pair."""

    mean: float
    std_dev: float


@dataclass(frozen=True)
class TransitionModel:
    """Label transition matrix, stored as sparse rows keyed by source id.

    End labels are terminal and have no row. Entries with probability 0 are
    permitted but never sampled.
    """

    rows: dict[int, dict[int, float]]

    def row(self, label_id: int) -> dict[int, float]:
        return self.rows[label_id]

    @cached_property
    def sampling_rows(self) -> dict[int, tuple[tuple[int, ...], tuple[float, ...]]]:
        """Per-row (targets, cumulative probabilities) for inverse sampling."""
        out = {}
        for src, row in self.rows.items():
            targets = tuple(t for t, p in row.items() if p > 0.0)
            cum, acc = [], 0.0
            for t in targets:
                acc += row[t]
                cum.append(acc)
            out[src] = (targets, tuple(cum))
        return out


@dataclass(frozen=True)
class Calendar:
    """Expected number of active resources per hour of the period."""

    expected_active: tuple[int, ...]
    period_hours: int = 168


def hour_of_week(clock: float, calendar: Calendar) -> int:
    """Map a simulation clock (hours) to its calendar slot, floor(clock) mod K."""
    if clock < 0:
        raise ValueError(f"clock must be non-negative, got {clock}")
    return int(math.floor(clock)) % calendar.period_hours


@dataclass(frozen=True)
class DtapInstance:
    labels: tuple[ActivityLabel, ...]
    resources: tuple[Resource, ...]
    pools: tuple[tuple[int, int], ...]
    completion: dict[tuple[int, int], CompletionModel]
    transitions: TransitionModel
    calendar: Calendar
    arrival_rate: float
    horizon_hours: float
    # Display name, set from the file stem on load. Not serialized.
    name: str = field(default="instance", compare=False)

    @cached_property
    def start_label_id(self) -> int:
        for lab in self.labels:
            if lab.kind == KIND_START:
                return lab.id
        raise ValueError("instance has no start label")

    @cached_property
    def end_label_ids(self) -> frozenset[int]:
        return frozenset(l.id for l in self.labels if l.kind == KIND_END)

    @cached_property
    def regular_label_ids(self) -> tuple[int, ...]:
        return tuple(l.id for l in self.labels if l.kind == KIND_REGULAR)

    @cached_property
    def pool_index(self) -> dict[tuple[int, int], int]:
        """Pool pair to assignment-node index, frozen in declaration order."""
        return {pair: j for j, pair in enumerate(self.pools)}

    @cached_property
    def pools_by_label(self) -> dict[int, tuple[int, ...]]:
        """Label id to the resource ids pooled with it, in pool order."""
        out: dict[int, list[int]] = {l.id: [] for l in self.labels}
        for lab, res in self.pools:
            out[lab].append(res)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def weights(self) -> tuple[int, ...]:
        return tuple(r.weight for r in self.resources)

    def label_name(self, label_id: int) -> str:
        return self.labels[label_id].name

    def resource_name(self, resource_id: int) -> str:
        return self.resources[resource_id].name


def validate_instance(instance: DtapInstance) -> list[Violation]:
    """Check every model invariant; returns an empty list iff the instance is valid."""
    v: list[Violation] = []

    def bad(code: str, message: str) -> None:
        v.append(Violation(code, message))

    labels = instance.labels
    label_ids = [l.id for l in labels]
    if sorted(label_ids) != list(range(len(labels))):
        bad("LABEL_IDS_NOT_DENSE", f"label ids must be 0..{len(labels) - 1}, got {sorted(label_ids)}")
    for lab in labels:
        if lab.kind not in LABEL_KINDS:
            bad("LABEL_KIND_INVALID", f"label {lab.id} has kind {lab.kind!r}")
    starts = [l.id for l in labels if l.kind == KIND_START]
    ends = [l.id for l in labels if l.kind == KIND_END]
    if len(starts) != 1:
        bad("START_LABEL_COUNT", f"expected exactly one start label, got {len(starts)}")
    if not ends:
        bad("END_LABEL_MISSING", "at least one end label is required")

    resources = instance.resources
    resource_ids = [r.id for r in resources]
    if sorted(resource_ids) != list(range(len(resources))):
        bad("RESOURCE_IDS_NOT_DENSE",
            f"resource ids must be 0..{len(resources) - 1}, got {sorted(resource_ids)}")
    for res in resources:
        if not isinstance(res.weight, int) or res.weight < 1:
            bad("RESOURCE_WEIGHT_INVALID", f"resource {res.id} weight must be an integer >= 1, got {res.weight!r}")

    known_labels = set(label_ids)
    known_resources = set(resource_ids)
    marker_ids = set(starts) | set(ends)
    seen_pairs = set()
    for pair in instance.pools:
        lab, res = pair
        if lab not in known_labels or res not in known_resources:
            bad("POOL_REF_UNKNOWN", f"pool pair {pair} references an unknown label or resource")
            continue
        if pair in seen_pairs:
            bad("POOL_DUPLICATE", f"pool pair {pair} appears more than once")
        seen_pairs.add(pair)
        if lab in marker_ids:
            bad("POOL_ON_MARKER_LABEL", f"pool pair {pair} attaches work to a start/end label")
    for lab in labels:
        if lab.kind == KIND_REGULAR and not any(p[0] == lab.id for p in instance.pools):
            bad("POOL_MISSING_FOR_LABEL", f"label {lab.id} ({lab.name}) has an empty resource pool")

    comp_keys = set(instance.completion)
    pool_set = set(instance.pools)
    if comp_keys != pool_set:
        missing = sorted(pool_set - comp_keys)
        extra = sorted(comp_keys - pool_set)
        bad("COMPLETION_POOL_MISMATCH",
            f"completion models must map pool pairs one-to-one (missing {missing}, extra {extra})")
    for pair, cm in instance.completion.items():
        if not (math.isfinite(cm.mean) and cm.mean > 0):
            bad("COMPLETION_MEAN_INVALID", f"pool {pair} mean must be finite and > 0, got {cm.mean}")
        if not (math.isfinite(cm.std_dev) and cm.std_dev >= 0):
            bad("COMPLETION_STD_INVALID", f"pool {pair} std_dev must be finite and >= 0, got {cm.std_dev}")

    rows = instance.transitions.rows
    start_ids = set(starts)
    end_ids = set(ends)
    for src in sorted(known_labels - end_ids):
        if src not in rows:
            bad("ROW_MISSING", f"label {src} has no transition row")
    any_end_mass = False
    for src, row in rows.items():
        if src not in known_labels:
            bad("ROW_REF_UNKNOWN", f"transition row for unknown label {src}")
            continue
        if src in end_ids:
            bad("ROW_FOR_END_LABEL", f"end label {src} must not have a transition row")
            continue
        total = 0.0
        for tgt, p in row.items():
            if tgt not in known_labels:
                bad("ROW_REF_UNKNOWN", f"row {src} targets unknown label {tgt}")
            if not (math.isfinite(p) and p >= 0):
                bad("ROW_PROB_INVALID", f"row {src} has invalid probability {p} for target {tgt}")
                continue
            if tgt in start_ids and p > 0:
                bad("ROW_TARGETS_START", f"row {src} assigns probability {p} to the start label")
            if tgt in end_ids and p > 0:
                any_end_mass = True
            total += p
        if abs(total - 1.0) > ROW_SUM_TOL:
            bad("ROW_NOT_STOCHASTIC", f"row {src} sums to {total!r}, expected 1")
    if rows and not any_end_mass:
        bad("NO_END_REACHABLE", "no transition row assigns positive probability to an end label")

    cal = instance.calendar
    if cal.period_hours < 1 or len(cal.expected_active) != cal.period_hours:
        bad("CALENDAR_LENGTH_INVALID",
            f"calendar must list one slot per period hour, got {len(cal.expected_active)} for K={cal.period_hours}")
    for k, n in enumerate(cal.expected_active):
        if not isinstance(n, int) or n < 0:
            bad("CALENDAR_SLOT_INVALID", f"calendar slot {k} must be a non-negative integer, got {n!r}")

    if not (math.isfinite(instance.arrival_rate) and instance.arrival_rate > 0):
        bad("ARRIVAL_RATE_INVALID", f"arrival_rate must be finite and > 0, got {instance.arrival_rate}")
    if not (math.isfinite(instance.horizon_hours) and instance.horizon_hours > 0):
        bad("HORIZON_INVALID", f"horizon_hours must be finite and > 0, got {instance.horizon_hours}")

    return v


_TOP_LEVEL_KEYS = ("labels", "resources", "pools", "completion", "transitions",
                   "calendar", "arrival_rate", "horizon_hours")


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise InstanceFormatError(f"{where}: missing mandatory field {key!r}")
    return mapping[key]


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InstanceFormatError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def instance_from_dict(data: dict, name: str = "instance") -> DtapInstance:
    """Build an instance from parsed JSON. Renormalizes near-stochastic rows;
    does not validate (see validate_instance)."""
    if not isinstance(data, dict):
        raise InstanceFormatError("instance document must be a JSON object")
    unknown = set(data) - set(_TOP_LEVEL_KEYS)
    if unknown:
        raise InstanceFormatError(f"unknown top-level fields: {sorted(unknown)}")
    for key in _TOP_LEVEL_KEYS:
        _require(data, key, "instance")

    labels = tuple(
        ActivityLabel(
            id=_as_int(_require(node, "id", f"labels[{i}]"), f"labels[{i}].id"),
            name=str(_require(node, "name", f"labels[{i}]")),
            kind=str(_require(node, "kind", f"labels[{i}]")),
        )
        for i, node in enumerate(data["labels"])
    )
    resources = tuple(
        Resource(
            id=_as_int(_require(node, "id", f"resources[{i}]"), f"resources[{i}].id"),
            name=str(_require(node, "name", f"resources[{i}]")),
            weight=_as_int(_require(node, "weight", f"resources[{i}]"), f"resources[{i}].weight"),
        )
        for i, node in enumerate(data["resources"])
    )
    pools = []
    for i, pair in enumerate(data["pools"]):
        if not (isinstance(pair, list) and len(pair) == 2):
            raise InstanceFormatError(f"pools[{i}]: expected [label_id, resource_id]")
        pools.append((_as_int(pair[0], f"pools[{i}][0]"), _as_int(pair[1], f"pools[{i}][1]")))

    completion = {}
    for i, node in enumerate(data["completion"]):
        where = f"completion[{i}]"
        pair = (_as_int(_require(node, "label_id", where), f"{where}.label_id"),
                _as_int(_require(node, "resource_id", where), f"{where}.resource_id"))
        completion[pair] = CompletionModel(
            mean=_as_number(_require(node, "mean", where), f"{where}.mean"),
            std_dev=_as_number(_require(node, "std_dev", where), f"{where}.std_dev"),
        )

    rows: dict[int, dict[int, float]] = {}
    for i, node in enumerate(data["transitions"]):
        where = f"transitions[{i}]"
        src = _as_int(_require(node, "from_id", where), f"{where}.from_id")
        if src in rows:
            raise InstanceFormatError(f"{where}: duplicate row for label {src}")
        row = {}
        for k, entry in enumerate(_require(node, "probs", where)):
            tgt = _as_int(_require(entry, "to_id", f"{where}.probs[{k}]"), f"{where}.probs[{k}].to_id")
            if tgt in row:
                raise InstanceFormatError(f"{where}.probs[{k}]: duplicate target {tgt}")
            row[tgt] = _as_number(_require(entry, "p", f"{where}.probs[{k}]"), f"{where}.probs[{k}].p")
        rows[src] = _renormalize(row)

    cal = data["calendar"]
    period = _as_int(_require(cal, "period_hours", "calendar"), "calendar.period_hours")
    slots = tuple(_as_int(x, f"calendar.expected_active[{i}]")
                  for i, x in enumerate(_require(cal, "expected_active", "calendar")))
    calendar = Calendar(expected_active=slots, period_hours=period)

    return DtapInstance(
        labels=labels,
        resources=resources,
        pools=tuple(pools),
        completion=completion,
        transitions=TransitionModel(rows=rows),
        calendar=calendar,
        arrival_rate=_as_number(data["arrival_rate"], "arrival_rate"),
        horizon_hours=_as_number(data["horizon_hours"], "horizon_hours"),
        name=name,
    )


def _renormalize(row: dict[int, float]) -> dict[int, float]:
    total = sum(row.values())
    if row and all(p >= 0 for p in row.values()) and 0 < abs(total - 1.0) <= ROW_RENORM_TOL:
        return {t: p / total for t, p in row.items()}
    return dict(row)


def instance_to_dict(instance: DtapInstance) -> dict:
    return {
        "labels": [{"id": l.id, "name": l.name, "kind": l.kind} for l in instance.labels],
        "resources": [{"id": r.id, "name": r.name, "weight": r.weight} for r in instance.resources],
        "pools": [[lab, res] for lab, res in instance.pools],
        "completion": [
            {"label_id": lab, "resource_id": res,
             "mean": instance.completion[(lab, res)].mean,
             "std_dev": instance.completion[(lab, res)].std_dev}
            for lab, res in instance.pools
        ],
        "transitions": [
            {"from_id": src, "probs": [{"to_id": t, "p": p} for t, p in row.items()]}
            for src, row in instance.transitions.rows.items()
        ],
        "calendar": {
            "period_hours": instance.calendar.period_hours,
            "expected_active": list(instance.calendar.expected_active),
        },
        "arrival_rate": instance.arrival_rate,
        "horizon_hours": instance.horizon_hours,
    }


def read_instance(path) -> DtapInstance:
    """Parse an instance file without validating it (see the validate CLI verb)."""
    import pathlib

    p = pathlib.Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{p}: not valid JSON ({exc})") from exc
    return instance_from_dict(data, name=p.stem)


def load_instance(path) -> DtapInstance:
    """Parse and validate an instance file; raises unless the instance is well formed."""
    instance = read_instance(path)
    violations = validate_instance(instance)
    if violations:
        raise InstanceValidationError(violations)
    return instance


def save_instance(instance: DtapInstance, path) -> None:
    import pathlib

    pathlib.Path(path).write_text(
        json.dumps(instance_to_dict(instance), indent=2) + "\n", encoding="utf-8")
