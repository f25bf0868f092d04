"""Observation payloads as tensors.

The wire observation is a heterogeneous graph with three node types:
resources (busy flag), activity labels (share of open cases), and assignment
nodes (mean completion time, one per permitted label-resource pair). Each
assignment node has at most one incoming resource edge and one incoming
activity edge; both are present exactly when the node is selectable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class GraphObs:
    resource_feat: torch.Tensor
    activity_feat: torch.Tensor
    assign_feat: torch.Tensor
    pair_label: torch.Tensor
    pair_resource: torch.Tensor
    gate_res: torch.Tensor
    gate_act: torch.Tensor
    mask: torch.Tensor
    step: int
    clock: float
    reward: float

    @property
    def n_assign(self) -> int:
        return self.assign_feat.shape[0]


def obs_from_payload(payload: dict, reward: float = 0.0) -> GraphObs:
    pairs = payload["assign_pairs"]
    n = len(pairs)
    res_edges = {tuple(edge) for edge in payload["edges_res"]}
    act_edges = {tuple(edge) for edge in payload["edges_act"]}
    gate_res = torch.zeros(n)
    gate_act = torch.zeros(n)
    for j, (label_id, resource_id) in enumerate(pairs):
        if (resource_id, j) in res_edges:
            gate_res[j] = 1.0
        if (label_id, j) in act_edges:
            gate_act[j] = 1.0
    return GraphObs(
        resource_feat=torch.tensor(payload["resource_feat"], dtype=torch.float32),
        activity_feat=torch.tensor(payload["activity_feat"], dtype=torch.float32),
        assign_feat=torch.tensor(payload["assign_feat"], dtype=torch.float32),
        pair_label=torch.tensor([p[0] for p in pairs], dtype=torch.long),
        pair_resource=torch.tensor([p[1] for p in pairs], dtype=torch.long),
        gate_res=gate_res,
        gate_act=gate_act,
        mask=torch.tensor(payload["mask"], dtype=torch.bool),
        step=int(payload["step"]),
        clock=float(payload["clock"]),
        reward=float(reward),
    )


@dataclass
class GraphBatch:
    """Observations stacked along a batch dimension.

    Stacking requires one fixed pair structure, which holds for any batch
    collected against a single served instance."""

    resource_feat: torch.Tensor
    activity_feat: torch.Tensor
    assign_feat: torch.Tensor
    pair_label: torch.Tensor
    pair_resource: torch.Tensor
    gate_res: torch.Tensor
    gate_act: torch.Tensor
    mask: torch.Tensor

    @classmethod
    def from_obs(cls, observations: list[GraphObs]) -> "GraphBatch":
        first = observations[0]
        for obs in observations[1:]:
            if not torch.equal(obs.pair_label, first.pair_label) or \
                    not torch.equal(obs.pair_resource, first.pair_resource):
                raise ValueError("cannot batch observations with different "
                                 "pair structures")
        return cls(
            resource_feat=torch.stack([o.resource_feat for o in observations]),
            activity_feat=torch.stack([o.activity_feat for o in observations]),
            assign_feat=torch.stack([o.assign_feat for o in observations]),
            pair_label=first.pair_label,
            pair_resource=first.pair_resource,
            gate_res=torch.stack([o.gate_res for o in observations]),
            gate_act=torch.stack([o.gate_act for o in observations]),
            mask=torch.stack([o.mask for o in observations]),
        )

    def select(self, indices) -> "GraphBatch":
        return GraphBatch(
            resource_feat=self.resource_feat[indices],
            activity_feat=self.activity_feat[indices],
            assign_feat=self.assign_feat[indices],
            pair_label=self.pair_label,
            pair_resource=self.pair_resource,
            gate_res=self.gate_res[indices],
            gate_act=self.gate_act[indices],
            mask=self.mask[indices],
        )

    def __len__(self) -> int:
        return self.resource_feat.shape[0]
