"""Policy and value networks over assignment graphs.

Both share the same encoder shape: per-node-type input projections, one
message per relation (resource to assignment, activity to assignment, and
the assignment self edge), and semantic attention that weighs the three
relations against each other. Messages along absent edges are gated to zero,
so a blocked assignment node is described by its self edge alone.

The policy head scores each assignment node, adds negative infinity on
blocked nodes, and log-softmaxes; blocked probabilities are exactly zero.
The value head sums assignment embeddings point-wise and applies a linear
layer, which makes it invariant to node order by construction.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .graphs import GraphBatch, GraphObs


class RelationEncoder(nn.Module):
    def __init__(self, embedding_dim: int = 16):
        super().__init__()
        if embedding_dim < 1:
            raise ValueError("embedding_dim must be at least 1")
        self.res_in = nn.Linear(1, embedding_dim)
        self.act_in = nn.Linear(1, embedding_dim)
        self.asg_in = nn.Linear(1, embedding_dim)
        self.path_self = nn.Linear(embedding_dim, embedding_dim)
        self.path_res = nn.Linear(embedding_dim, embedding_dim)
        self.path_act = nn.Linear(embedding_dim, embedding_dim)
        self.semantic_proj = nn.Linear(embedding_dim, embedding_dim)
        self.semantic_query = nn.Parameter(torch.randn(embedding_dim) * 0.1)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        """(B, J, d) assignment-node embeddings."""
        h_res = F.elu(self.res_in(batch.resource_feat.unsqueeze(-1)))
        h_act = F.elu(self.act_in(batch.activity_feat.unsqueeze(-1)))
        h_asg = F.elu(self.asg_in(batch.assign_feat.unsqueeze(-1)))

        z_self = F.elu(self.path_self(h_asg))
        z_res = F.elu(self.path_res(h_res[:, batch.pair_resource, :]))
        z_res = z_res * batch.gate_res.unsqueeze(-1)
        z_act = F.elu(self.path_act(h_act[:, batch.pair_label, :]))
        z_act = z_act * batch.gate_act.unsqueeze(-1)

        paths = torch.stack((z_self, z_res, z_act), dim=1)  # (B, 3, J, d)
        scores = torch.tanh(self.semantic_proj(paths)) @ self.semantic_query
        weights = torch.softmax(scores.mean(dim=-1), dim=-1)  # (B, 3)
        return (weights.unsqueeze(-1).unsqueeze(-1) * paths).sum(dim=1)


class PolicyNetwork(nn.Module):
    def __init__(self, embedding_dim: int = 16):
        super().__init__()
        self.encoder = RelationEncoder(embedding_dim)
        self.head = nn.Linear(embedding_dim, 1)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        """(B, J) log-probabilities; blocked nodes are -inf."""
        if not batch.mask.any(dim=-1).all():
            raise ValueError("observation with no selectable assignment")
        scores = self.head(self.encoder(batch)).squeeze(-1)
        masked = scores.masked_fill(~batch.mask, float("-inf"))
        return F.log_softmax(masked, dim=-1)


class ValueNetwork(nn.Module):
    def __init__(self, embedding_dim: int = 16):
        super().__init__()
        self.encoder = RelationEncoder(embedding_dim)
        self.head = nn.Linear(embedding_dim, 1)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        """(B,) state values."""
        pooled = self.encoder(batch).sum(dim=1)
        return self.head(pooled).squeeze(-1)


def _as_batch(obs: GraphObs) -> GraphBatch:
    return GraphBatch.from_obs([obs])


def policy_forward(policy: PolicyNetwork, obs: GraphObs) -> torch.Tensor:
    """(J,) log-probabilities for one observation."""
    return policy(_as_batch(obs)).squeeze(0)


def value_forward(value: ValueNetwork, obs: GraphObs) -> torch.Tensor:
    """Scalar state value for one observation."""
    return value(_as_batch(obs)).squeeze(0)


def sample_action(policy: PolicyNetwork, obs: GraphObs) -> tuple[int, float]:
    """Draw an action; returns (index, log-probability of the draw)."""
    log_probs = policy_forward(policy, obs)
    dist = torch.distributions.Categorical(logits=log_probs)
    action = dist.sample()
    return int(action.item()), float(dist.log_prob(action).item())


def greedy_action(policy: PolicyNetwork, obs: GraphObs) -> int:
    with torch.no_grad():
        return int(policy_forward(policy, obs).argmax().item())
