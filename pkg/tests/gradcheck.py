"""Central finite differences against autograd for the joint objective."""

import torch

from votseg.encoder import VotNet
from votseg.segmentation import Segmentation
from votseg.training import Example, utterance_loss


def miniature(seed=0, T=6, D=4, h=5, C=3, use_adversary=True):
    torch.manual_seed(seed)
    net = VotNet(D, h, 2, n_corpora=C, branch_width=6, use_adversary=use_adversary).double()
    # larger weights than the default init so the argmax has clear margins
    with torch.no_grad():
        for p in net.parameters():
            p.mul_(2.0)
    g = torch.Generator().manual_seed(seed + 100)
    x = torch.randn(T, D, generator=g, dtype=torch.float64)
    return net, x


def examples_for(x):
    T = x.shape[0]
    return [
        Example(None, x, Segmentation(2, 5), "positive", 1),
        Example(None, x, Segmentation(1, T), "negative", 2),
    ]


def _numeric(net, f, p, eps):
    flat = p.data.view(-1)
    out = torch.empty(flat.numel(), dtype=p.dtype)
    for k in range(flat.numel()):
        old = flat[k].item()
        with torch.no_grad():
            flat[k] = old + eps
            up = f()
            flat[k] = old - eps
            down = f()
            flat[k] = old
        out[k] = (up - down) / (2 * eps)
    return out


def relative_errors(net, ex, cfg, eps=1e-5, floor=1e-6):
    """Per-parameter max of |a - n| / max(|a|, |n|, floor) over elements.

    With the gate on, parameters feeding the adversary through the gate are
    checked against ``struct + tagger - lam * adversary``; the adversary's own
    parameters against the plain total.
    """
    net.zero_grad()
    utterance_loss(ex, net, cfg).total.backward()
    gate = net.reverse_adversary_gradient

    def plain():
        return utterance_loss(ex, net, cfg).total.item()

    def reversed_():
        b = utterance_loss(ex, net, cfg)
        return (b.struct_loss + b.tagger_loss - b.lam * b.adversary_loss).item()

    errs = {}
    for name, p in net.named_parameters():
        analytic = torch.zeros(p.numel(), dtype=p.dtype) if p.grad is None else p.grad.detach().reshape(-1).clone()
        upstream = name.startswith("lstm.")
        numeric = _numeric(net, reversed_ if (gate and upstream) else plain, p, eps)
        denom = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=floor)
        errs[name] = float(((analytic - numeric).abs() / denom).max())
    return errs
