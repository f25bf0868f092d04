"""Graph observations over decision states.

Each observation has one node per resource (busy flag), one per activity
label (share of waiting cases), and one per assignment pool pair (mean
completion time). An assignment node receives its resource edge and its
activity edge exactly when the pair is feasible, and the action mask marks
those non-isolated nodes selectable. Every assignment node also carries an
implicit self edge, which serialization omits because it is structural.

Node order is frozen to instance declaration order, so action indices are
stable across steps and across processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SimState
from .model import DtapInstance

STD_GUARD = 1e-9


class ActionDecodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AssignmentGraph:
    resource_feat: np.ndarray
    activity_feat: np.ndarray
    assign_feat: np.ndarray
    assign_pairs: tuple[tuple[int, int], ...]
    edges_res: tuple[tuple[int, int], ...]
    edges_act: tuple[tuple[int, int], ...]
    mask: np.ndarray
    step: int
    clock: float
    standardized: bool = False


def build_observation(state: SimState, instance: DtapInstance) -> AssignmentGraph:
    """Raw (unstandardized) observation of the current state."""
    n_resources = len(instance.resources)
    n_labels = len(instance.labels)

    resource_feat = np.ones(n_resources)
    for rid in state.active_resources:
        resource_feat[rid] = 0.0

    activity_feat = np.zeros(n_labels)
    total_active = len(state.active_cases)
    if total_active:
        for label_id, queue in state.label_queues.items():
            activity_feat[label_id] = len(queue) / total_active

    assign_feat = np.array([instance.completion[pair].mean for pair in instance.pools])

    edges_res, edges_act = [], []
    mask = np.zeros(len(instance.pools), dtype=np.int8)
    for j, (label_id, resource_id) in enumerate(instance.pools):
        if resource_feat[resource_id] == 0.0 and activity_feat[label_id] > 0.0:
            edges_res.append((resource_id, j))
            edges_act.append((label_id, j))
            mask[j] = 1

    return AssignmentGraph(
        resource_feat=resource_feat,
        activity_feat=activity_feat,
        assign_feat=assign_feat,
        assign_pairs=instance.pools,
        edges_res=tuple(edges_res),
        edges_act=tuple(edges_act),
        mask=mask,
        step=state.decision_step,
        clock=state.clock,
    )


def _standardize(values: np.ndarray) -> np.ndarray:
    std = values.std()
    if std < STD_GUARD:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def standardize_features(graph: AssignmentGraph) -> AssignmentGraph:
    """Center and scale each node type's features independently (population
    std); near-constant vectors become all zeros."""
    return AssignmentGraph(
        resource_feat=_standardize(graph.resource_feat),
        activity_feat=_standardize(graph.activity_feat),
        assign_feat=_standardize(graph.assign_feat),
        assign_pairs=graph.assign_pairs,
        edges_res=graph.edges_res,
        edges_act=graph.edges_act,
        mask=graph.mask,
        step=graph.step,
        clock=graph.clock,
        standardized=True,
    )


def decode_action(graph: AssignmentGraph, node_index: int) -> tuple[int, int]:
    """Selected assignment node back to its pool pair; blocked and
    out-of-range indices are rejected."""
    if not isinstance(node_index, int) or isinstance(node_index, bool):
        raise ActionDecodeError(f"action index must be an integer, got {node_index!r}")
    if not 0 <= node_index < len(graph.assign_pairs):
        raise ActionDecodeError(
            f"action index {node_index} outside [0, {len(graph.assign_pairs)})")
    if not graph.mask[node_index]:
        raise ActionDecodeError(f"assignment node {node_index} is blocked by the mask")
    return graph.assign_pairs[node_index]


def serialize_observation(graph: AssignmentGraph) -> dict:
    return {
        "resource_feat": [float(x) for x in graph.resource_feat],
        "activity_feat": [float(x) for x in graph.activity_feat],
        "assign_feat": [float(x) for x in graph.assign_feat],
        "assign_pairs": [[l, m] for l, m in graph.assign_pairs],
        "edges_res": [[m, j] for m, j in graph.edges_res],
        "edges_act": [[l, j] for l, j in graph.edges_act],
        "mask": [int(x) for x in graph.mask],
        "step": graph.step,
        "clock": graph.clock,
    }


def deserialize_observation(payload: dict) -> AssignmentGraph:
    return AssignmentGraph(
        resource_feat=np.array([float(x) for x in payload["resource_feat"]]),
        activity_feat=np.array([float(x) for x in payload["activity_feat"]]),
        assign_feat=np.array([float(x) for x in payload["assign_feat"]]),
        assign_pairs=tuple((int(l), int(m)) for l, m in payload["assign_pairs"]),
        edges_res=tuple((int(m), int(j)) for m, j in payload["edges_res"]),
        edges_act=tuple((int(l), int(j)) for l, j in payload["edges_act"]),
        mask=np.array([int(x) for x in payload["mask"]], dtype=np.int8),
        step=int(payload["step"]),
        clock=float(payload["clock"]),
        standardized=True,
    )
