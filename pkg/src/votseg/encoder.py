"""Recurrent feature function, VOT-type tagger and corpus adversary.

A stacked bidirectional LSTM embeds every frame; two affine heads (one per
VOT sign) turn each embedding into a pair of boundary scores. The tagger and
the corpus adversary read the same summary vector: the forward direction's
state at the last frame concatenated with the backward direction's state at
the first frame. The adversary sits behind a gradient-reversal gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DataError, ModelFormatError, StorageError
from .frontend import NormStats, apply_norm
from .segmentation import FeatureSequence, ScoreMatrix, VotMeasurement, decode, vot_from_segmentation

FORMAT_NAME = "votseg-model"
FORMAT_VERSION = 1
HEADS = ("pos", "neg")


class _ReverseGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -grad


def reverse_gradient(x: torch.Tensor) -> torch.Tensor:
    """Identity on the forward pass, negated gradient on the backward pass."""
    return _ReverseGrad.apply(x)


def _uniform_fan_in(module: nn.Module) -> None:
    for name, p in module.named_parameters():
        if p.dim() >= 2:
            bound = 1.0 / math.sqrt(p.shape[1])
        else:
            # biases: LSTM biases follow the hidden size, linear biases the layer input
            bound = 1.0 / math.sqrt(module.hidden_size if isinstance(module, nn.LSTM) else module.in_features)
        nn.init.uniform_(p, -bound, bound)


class BranchNet(nn.Module):
    """Affine + ReLU hidden layer followed by an output layer (softmax applied by callers)."""

    def __init__(self, in_dim: int, width: int, n_out: int):
        super().__init__()
        self.hidden = nn.Linear(in_dim, width)
        self.out = nn.Linear(width, n_out)
        for layer in (self.hidden, self.out):
            _uniform_fan_in(layer)

    def forward(self, v):
        return self.out(F.relu(self.hidden(v)))


class AdversaryNet(BranchNet):
    def __init__(self, in_dim: int, width: int, n_corpora: int):
        if n_corpora < 2:
            raise ConfigError(f"the corpus adversary needs at least 2 corpora, got {n_corpora}")
        super().__init__(in_dim, width, n_corpora)

    def forward(self, v, reverse: bool = True):
        return super().forward(reverse_gradient(v) if reverse else v)


class VotNet(nn.Module):
    def __init__(
        self,
        input_size: int,
        hidden_size: int = 100,
        num_layers: int = 2,
        n_corpora: int = 0,
        branch_width: int = 50,
        use_tagger: bool = True,
        use_adversary: bool = True,
    ):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.branch_width = branch_width
        self.use_tagger = use_tagger
        self.lstm = nn.LSTM(input_size, hidden_size, num_layers=num_layers, bidirectional=True)
        _uniform_fan_in(self.lstm)
        emb = 2 * hidden_size
        self.heads = nn.ModuleDict({"pos": nn.Linear(emb, 2)})
        if use_tagger:
            self.heads["neg"] = nn.Linear(emb, 2)
        for head in self.heads.values():
            _uniform_fan_in(head)
        self.tagger = BranchNet(emb, branch_width, 2) if use_tagger else None
        self.adversary = AdversaryNet(emb, branch_width, n_corpora) if use_adversary else None
        # training flips the adversary's gradient into the encoder; switchable for gradient checks
        self.reverse_adversary_gradient = True

    @property
    def n_corpora(self) -> int:
        return 0 if self.adversary is None else self.adversary.out.out_features

    @property
    def dtype(self):
        return self.heads["pos"].weight.dtype

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """``T x D`` features to ``T x 2h`` frame embeddings."""
        if x.dim() != 2 or x.shape[1] != self.input_size:
            raise DataError(f"expected a T x {self.input_size} feature matrix, got {tuple(x.shape)}")
        out, _ = self.lstm(x.unsqueeze(1))
        return out[:, 0, :]

    def head_for(self, vot_type: str) -> str:
        if not self.use_tagger:
            return "pos"
        return "pos" if vot_type == "positive" else "neg"

    def score_frames(self, H: torch.Tensor, head: str) -> torch.Tensor:
        return self.heads[head](H)

    def summarize(self, H: torch.Tensor) -> torch.Tensor:
        h = self.hidden_size
        return torch.cat([H[-1, :h], H[0, h:]])

    def tag_logits(self, summary: torch.Tensor) -> torch.Tensor:
        if self.tagger is None:
            raise ConfigError("this model was built without a tagger")
        return self.tagger(summary)

    def tag(self, summary: torch.Tensor) -> torch.Tensor:
        """[P(positive), P(negative)]."""
        return torch.softmax(self.tag_logits(summary), dim=-1)

    def adversary_logits(self, summary: torch.Tensor, reverse: bool = True) -> torch.Tensor:
        if self.adversary is None:
            raise ConfigError("this model was built without an adversary")
        return self.adversary(summary, reverse=reverse)

    def adversary_predict(self, summary: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.adversary_logits(summary), dim=-1)


def select_head(probs) -> str:
    """Positive head unless the tagger strictly prefers negative."""
    p_pos, p_neg = float(probs[0]), float(probs[1])
    return "positive" if p_pos >= p_neg else "negative"


@dataclass
class VotModel:
    """Trained network plus everything needed to reproduce its inputs."""

    net: VotNet
    norm: NormStats
    corpora: list = field(default_factory=list)
    lam: float = 0.1
    tau_frames: int = 2
    seed: int = 0

    def _input(self, x: FeatureSequence) -> torch.Tensor:
        z = apply_norm(x, self.norm).frames
        return torch.as_tensor(z, dtype=self.net.dtype)

    @torch.no_grad()
    def embed(self, x: FeatureSequence) -> torch.Tensor:
        return self.net.encode(self._input(x))

    @torch.no_grad()
    def summary(self, x: FeatureSequence) -> np.ndarray:
        return self.net.summarize(self.embed(x)).double().numpy()

    @torch.no_grad()
    def predict(self, x: FeatureSequence) -> VotMeasurement:
        self.net.eval()
        H = self.embed(x)
        if self.net.use_tagger:
            probs = self.net.tag(self.net.summarize(H))
            kind = select_head(probs)
            p = float(probs[0] if kind == "positive" else probs[1])
        else:
            kind, p = "positive", 1.0
        scores = self.net.score_frames(H, self.net.head_for(kind)).double().numpy()
        seg = decode(ScoreMatrix(scores))
        return vot_from_segmentation(seg, kind, x.frame_period_ms, type_prob=min(max(p, 0.0), 1.0))

    def describe(self) -> dict:
        n = self.net
        return {
            "input_dim": self.norm.input_dim,
            "model_dim": n.input_size,
            "hidden_size": n.hidden_size,
            "num_layers": n.num_layers,
            "branch_width": n.branch_width,
            "n_corpora": n.n_corpora,
            "use_tagger": n.use_tagger,
            "use_adversary": n.adversary is not None,
            "lambda": self.lam,
            "tau_frames": self.tau_frames,
            "seed": self.seed,
            "corpora": list(self.corpora),
        }

    def save(self, path) -> None:
        blob = {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "config": self.describe(),
            "norm": self.norm.to_dict(),
            "state": {k: v.detach().clone() for k, v in self.net.state_dict().items()},
        }
        try:
            torch.save(blob, str(path))
        except OSError as e:
            raise StorageError(f"cannot write model to {path}: {e}") from e

    @classmethod
    def load(cls, path) -> "VotModel":
        if not Path(path).exists():
            raise StorageError(f"model file not found: {path}")
        try:
            blob = torch.load(str(path), map_location="cpu", weights_only=True)
        except Exception as e:
            raise ModelFormatError(f"{path} is not a readable model file ({e})") from e
        if not isinstance(blob, dict) or blob.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"{path} is not a {FORMAT_NAME} file")
        if blob.get("format_version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path} has format version {blob.get('format_version')}, this build reads version {FORMAT_VERSION}"
            )
        c = blob["config"]
        net = VotNet(
            c["model_dim"],
            c["hidden_size"],
            c["num_layers"],
            n_corpora=c["n_corpora"],
            branch_width=c["branch_width"],
            use_tagger=c["use_tagger"],
            use_adversary=c["use_adversary"],
        )
        state = blob["state"]
        net.to(next(iter(state.values())).dtype)
        net.load_state_dict(state)
        net.eval()
        return cls(net, NormStats.from_dict(blob["norm"]), c["corpora"], c["lambda"], c["tau_frames"], c["seed"])
