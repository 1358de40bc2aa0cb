"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import torch
from torch.func import functional_call, vmap

from stimpute.diffusion import training_loss
from stimpute.model import ModelConfig, MultiHeadAttention, NoisePredictor

# smallest configuration used for exhaustive gradient checks
TINY = dict(n_nodes=4, channels=8, heads=2, layers=1, virtual_nodes=2)


def ref_attention(mha: MultiHeadAttention, query, key, value):
    """Per-position loop reference: softmax(q k^T / sqrt(dh)) v per head."""
    q = mha.q_proj(query)
    k = mha.k_proj(key)
    v = mha.v_proj(value)
    heads, dh = mha.heads, mha.head_dim
    out = torch.zeros_like(q)
    for i in range(q.shape[-2]):
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = torch.stack([(q[..., i, sl] * k[..., j, sl]).sum(-1) for j in range(k.shape[-2])], -1)
            w = torch.softmax(scores / math.sqrt(dh), -1)
            out[..., i, sl] = sum(w[..., j : j + 1] * v[..., j, sl] for j in range(k.shape[-2]))
    return mha.out_proj(out)


def finite_difference_errors(seed=0, h=1e-5, chunk=512):
    """Per-tensor relative error between autograd and central differences of
    the masked loss on the tiny configuration, double precision."""
    torch.manual_seed(seed)
    model = NoisePredictor(ModelConfig(**TINY, num_steps=50)).double()
    torch.nn.init.normal_(model.head2.weight, std=0.3)  # zero head would hide upstream gradients
    gen = torch.Generator().manual_seed(seed)
    x, c, eps = (torch.randn(2, 4, 6, generator=gen, dtype=torch.float64) for _ in range(3))
    adj = torch.rand(4, 4, generator=gen, dtype=torch.float64)
    mask = (torch.rand(2, 4, 6, generator=gen) < 0.5).double()
    t = torch.tensor([7, 30])
    params = {k: v.detach() for k, v in model.named_parameters()}

    def loss(p):
        return training_loss(eps, functional_call(model, p, (x, c, adj, t)), mask)

    grads = torch.func.grad(loss)(params)
    errors = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        n = flat.numel()
        fd = torch.empty(n, dtype=torch.float64)

        def along(w, name=name, shape=p.shape):
            return loss({**params, name: w.reshape(shape)})

        for start in range(0, n, chunk):
            idx = torch.arange(start, min(n, start + chunk))
            bump = torch.zeros(len(idx), n, dtype=torch.float64)
            bump[torch.arange(len(idx)), idx] = h
            fd[idx] = (vmap(along)(flat + bump) - vmap(along)(flat - bump)) / (2 * h)
        g = grads[name].reshape(-1)
        # floor keeps tensors with vanishing gradient from dividing roundoff by ~0
        errors[name] = float((g - fd).norm() / max(g.norm(), fd.norm(), 1e-6))
    return errors
