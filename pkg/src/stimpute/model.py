"""Noise prediction network.

Tensors are laid out channels-last, ``(batch, nodes, steps, channels)``, so
every 1x1 convolution is an ``nn.Linear`` on the last axis.

The network turns the interpolated conditioning values into a noise-free prior
``H_pri`` once (a wide block of spatial attention, temporal attention and
graph message passing), then runs a deep stack of noise-estimation layers
whose attention weights come from ``H_pri`` while the values come from the
noisy stream.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    channels: int = 64
    heads: int = 8
    layers: int = 4
    virtual_nodes: int | None = 16  # None = full spatial attention
    num_steps: int = 50
    step_embed_dim: int = 128
    time_embed_dim: int = 128
    node_embed_dim: int = 16
    diffusion_order: int = 2
    adaptive_dim: int = 10

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels={self.channels} not divisible by heads={self.heads}")
        for name in ("n_nodes", "channels", "heads", "layers", "num_steps", "diffusion_order"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.virtual_nodes is not None and self.virtual_nodes < 1:
            raise ValueError("virtual_nodes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_step_table(num_steps: int, dim: int = 128) -> torch.Tensor:
    """Rows t = 1..T of [sin(t f), cos(t f)] with f = 10^(4 j / (dim/2 - 1))."""
    half = dim // 2
    steps = torch.arange(1, num_steps + 1, dtype=torch.float64)[:, None]
    freqs = 10.0 ** (torch.arange(half, dtype=torch.float64) / (half - 1) * 4.0)[None, :]
    table = steps * freqs
    return torch.cat([torch.sin(table), torch.cos(table)], dim=1)


def time_encoding(length: int, dim: int = 128) -> torch.Tensor:
    """Transformer position encoding of steps 0..L-1, shape (L, dim)."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.pow(10000.0, torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos / div)
    pe[:, 1::2] = torch.cos(pos / div)
    return pe


def transition_matrices(adj: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Row-normalized forward and backward transition matrices."""
    fwd = adj / adj.sum(1, keepdim=True).clamp_min(1e-12)
    adj_t = adj.transpose(0, 1)
    bwd = adj_t / adj_t.sum(1, keepdim=True).clamp_min(1e-12)
    return fwd, bwd


class MultiHeadAttention(nn.Module):
    """Dot-product attention over the second-to-last axis, with queries/keys
    and values allowed to come from different tensors."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)
        self.record = False
        self.last_weights = None

    def _split(self, x):
        return x.reshape(*x.shape[:-1], self.heads, self.head_dim).transpose(-2, -3)

    def forward(self, query, key, value):
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        if self.record:
            weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
            self.last_weights = weights.detach()
            out = weights @ v
        else:
            out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(-2, -3)
        return self.out_proj(out.reshape(*out.shape[:-2], -1))


class TemporalAttention(nn.Module):
    """Attention along the step axis, independently per node."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(channels, heads)

    def forward(self, value, guide=None):
        guide = value if guide is None else guide
        return self.attn(guide, guide, value)


class SpatialAttention(nn.Module):
    """Attention along the node axis, independently per step.

    With ``virtual_nodes=k`` the keys and values are first mixed from N
    nodes down to k virtual nodes by learnable (k x N) matrices, so each
    query attends over k entries.
    """

    def __init__(self, channels: int, heads: int, n_nodes: int, virtual_nodes: int | None = None):
        super().__init__()
        self.attn = MultiHeadAttention(channels, heads)
        self.virtual_nodes = virtual_nodes
        if virtual_nodes is not None:
            bound = 1.0 / math.sqrt(n_nodes)
            self.key_nodes = nn.Parameter(torch.empty(virtual_nodes, n_nodes).uniform_(-bound, bound))
            self.value_nodes = nn.Parameter(torch.empty(virtual_nodes, n_nodes).uniform_(-bound, bound))

    def forward(self, value, guide=None):
        guide = value if guide is None else guide
        # (B, N, L, d) -> (B, L, N, d)
        v = value.transpose(1, 2)
        g = guide.transpose(1, 2)
        k = g
        if self.virtual_nodes is not None:
            k = torch.einsum("kn,blnd->blkd", self.key_nodes, g)
            v = torch.einsum("kn,blnd->blkd", self.value_nodes, v)
        return self.attn(g, k, v).transpose(1, 2)


class MPNN(nn.Module):
    """Diffusion graph convolution over forward, backward and adaptive
    transition matrices, powers 0..K, one channel mix over all terms."""

    def __init__(self, channels: int, order: int = 2, n_supports: int = 3):
        super().__init__()
        self.order = order
        self.mix = nn.Linear(channels * (1 + order * n_supports), channels)

    def forward(self, x, supports):
        # equivalent to mix(cat(terms)) without materializing the concatenation
        b, n, length, d = x.shape
        weight = self.mix.weight
        out = F.linear(x, weight[:, :d], self.mix.bias)
        j = 1
        for a in supports:
            h = x.reshape(b, n, length * d)
            for _ in range(self.order):
                h = torch.matmul(a, h)
                out = out + F.linear(h.view(b, n, length, d), weight[:, j * d : (j + 1) * d])
                j += 1
        return out


class MLP(nn.Sequential):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


class PriorExtractor(nn.Module):
    """Wide single block: MLP(Norm(SA(h)+h) + Norm(TA(h)+h) + Norm(MP(h)+h))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.channels
        self.spatial = SpatialAttention(d, cfg.heads, cfg.n_nodes, cfg.virtual_nodes)
        self.temporal = TemporalAttention(d, cfg.heads)
        self.mpnn = MPNN(d, cfg.diffusion_order)
        self.norm_spatial = nn.LayerNorm(d)
        self.norm_temporal = nn.LayerNorm(d)
        self.norm_mpnn = nn.LayerNorm(d)
        self.mlp = MLP(d, d, d)

    def forward(self, h, supports):
        sa = self.norm_spatial(self.spatial(h) + h)
        ta = self.norm_temporal(self.temporal(h) + h)
        mp = self.norm_mpnn(self.mpnn(h, supports) + h)
        return self.mlp(sa + ta + mp)


class NoiseEstimationLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.channels
        self.step_proj = nn.Linear(cfg.step_embed_dim, d)
        self.temporal = TemporalAttention(d, cfg.heads)
        self.spatial = SpatialAttention(d, cfg.heads, cfg.n_nodes, cfg.virtual_nodes)
        self.mpnn = MPNN(d, cfg.diffusion_order)
        self.norm_temporal = nn.LayerNorm(d)
        self.norm_spatial = nn.LayerNorm(d)
        self.norm_mpnn = nn.LayerNorm(d)
        self.mlp = MLP(d, d, d)
        self.gate_proj = nn.Linear(d, 2 * d)
        self.out_proj = nn.Linear(d, 2 * d)

    def forward(self, x, prior, supports, step_embed, aux):
        """Return ``(residual, skip)``; ``residual`` feeds the next layer."""
        h = x + aux + self.step_proj(step_embed)[:, None, None, :]
        # residual keeps each cell's own noisy value alongside the mixed one
        h_tem = self.norm_temporal(self.temporal(h, guide=prior) + h)
        sa = self.norm_spatial(self.spatial(h_tem, guide=prior) + h_tem)
        mp = self.norm_mpnn(self.mpnn(h_tem, supports) + h_tem)
        h_spa = self.mlp(sa + mp)
        gate, filt = self.gate_proj(h_spa).chunk(2, dim=-1)
        z = torch.sigmoid(gate) * torch.tanh(filt)
        residual, skip = self.out_proj(z).chunk(2, dim=-1)
        return (x + residual) / math.sqrt(2.0), skip


class StepEmbedding(nn.Module):
    def __init__(self, num_steps: int, dim: int = 128):
        super().__init__()
        self.register_buffer("table", sinusoidal_step_table(num_steps, dim).float(), persistent=False)
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, t):
        x = self.table.to(self.fc1.weight.dtype)[t - 1]
        return F.silu(self.fc2(F.silu(self.fc1(x))))


class AuxEncoder(nn.Module):
    """MLP over [time encoding (L x 128) || node embedding (N x 16)]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.time_dim = cfg.time_embed_dim
        self.node_embedding = nn.Parameter(torch.randn(cfg.n_nodes, cfg.node_embed_dim))
        self.mlp = MLP(cfg.time_embed_dim + cfg.node_embed_dim, cfg.channels, cfg.channels)

    def forward(self, length: int):
        u_tem = time_encoding(length, self.time_dim).to(self.node_embedding.dtype)
        n = self.node_embedding.shape[0]
        u = torch.cat(
            [u_tem[None].expand(n, -1, -1), self.node_embedding[:, None, :].expand(-1, length, -1)], dim=-1
        )
        return self.mlp(u)


class NoisePredictor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.num_steps = cfg.num_steps
        d = cfg.channels
        self.cond_proj = nn.Linear(1, d)
        self.input_proj = nn.Linear(2, d)
        self.aux = AuxEncoder(cfg)
        self.step_embedding = StepEmbedding(cfg.num_steps, cfg.step_embed_dim)
        self.adaptive_src = nn.Parameter(torch.randn(cfg.n_nodes, cfg.adaptive_dim))
        self.adaptive_dst = nn.Parameter(torch.randn(cfg.n_nodes, cfg.adaptive_dim))
        self.prior = PriorExtractor(cfg)
        self.layers = nn.ModuleList(NoiseEstimationLayer(cfg) for _ in range(cfg.layers))
        self.head1 = nn.Linear(d, d)
        self.head2 = nn.Linear(d, 1)
        nn.init.zeros_(self.head2.weight)
        nn.init.zeros_(self.head2.bias)

    def adaptive_adjacency(self):
        return torch.softmax(F.relu(self.adaptive_src @ self.adaptive_dst.T), dim=1)

    def supports(self, adj):
        fwd, bwd = transition_matrices(adj.to(self.head1.weight.dtype))
        return [fwd, bwd, self.adaptive_adjacency()]

    def embed_step(self, t):
        return self.step_embedding(torch.as_tensor(t, dtype=torch.long).reshape(-1))

    def extract_prior(self, x_cond, adj, aux=None, supports=None):
        """Conditional feature from the interpolated conditioning values only."""
        if aux is None:
            aux = self.aux(x_cond.shape[-1])
        if supports is None:
            supports = self.supports(adj)
        h = self.cond_proj(x_cond[..., None]) + aux
        return self.prior(h, supports)

    def forward(self, x_noisy, x_cond, adj, t, prior=None):
        """Predict the injected noise, shape (B, N, L).

        ``prior`` may carry a precomputed :meth:`extract_prior` output for
        ``x_cond``; samplers reuse it across diffusion steps.
        """
        b, n, length = x_noisy.shape
        if x_cond.shape != x_noisy.shape:
            raise ValueError("noisy and conditioning inputs differ in shape")
        if adj.shape != (n, n) or n != self.cfg.n_nodes:
            raise ValueError(f"model expects {self.cfg.n_nodes} nodes, got inputs with {n} and adjacency {tuple(adj.shape)}")
        supports = self.supports(adj)
        aux = self.aux(length)
        if prior is None:
            prior = self.extract_prior(x_cond, adj, aux, supports)
        x = self.input_proj(torch.stack([x_cond, x_noisy], dim=-1))
        step = self.embed_step(t).expand(b, -1)
        skips = 0
        for layer in self.layers:
            x, skip = layer(x, prior, supports, step, aux)
            skips = skips + skip
        out = F.relu(self.head1(skips / math.sqrt(len(self.layers))))
        return self.head2(out).squeeze(-1)


def predict_noise(model: NoisePredictor, x_noisy, x_cond, adj, t):
    return model(x_noisy, x_cond, adj, t)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def node_dependent_count(cfg: ModelConfig) -> int:
    """Parameters that scale with N, per node: node embedding, the two
    adaptive-adjacency embeddings, and the virtual-node key/value mixers of
    every spatial attention block (prior block + each layer)."""
    per_node = cfg.node_embed_dim + 2 * cfg.adaptive_dim
    if cfg.virtual_nodes is not None:
        per_node += 2 * cfg.virtual_nodes * (cfg.layers + 1)
    return per_node * cfg.n_nodes


def as_numpy(x) -> np.ndarray:
    return x.detach().cpu().numpy()
