"""Joint training of the segmenter, the VOT-type tagger and the corpus adversary.

The per-utterance objective is ``struct + tagger + lam * adversary``: the
max-margin structural hinge on the gold-type head, the tagger's negative
log-likelihood and the adversary's negative log-likelihood (whose gradient
reaches the encoder with its sign flipped).
"""

from __future__ import annotations

import copy
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .datakit import Utterance, split_by_speaker
from .encoder import VotModel, VotNet
from .errors import ConfigError, DataError
from .evaluation import ToleranceTable, classification_accuracy, tolerance_table
from .frontend import apply_norm, fit_norm
from .segmentation import Segmentation, TaskLossConfig, loss_augmented_decode, task_loss

log = logging.getLogger(__name__)

TYPE_INDEX = {"positive": 0, "negative": 1}


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 100
    patience: int = 5
    tau_frames: int = 2
    lam: float = 0.1
    seed: int = 0
    batch_size: int = 1
    hidden_size: int = 100
    num_layers: int = 2
    branch_width: int = 50
    use_tagger: bool = True
    use_adversary: bool = True
    balance_classes: bool = True
    eval_taus: tuple = (2, 5, 10, 15)
    dtype: str = "float32"

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be positive")
        if self.tau_frames < 0 or int(self.tau_frames) != self.tau_frames:
            raise ConfigError("tau_frames must be a nonnegative integer")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.hidden_size < 1 or self.num_layers < 1 or self.branch_width < 1:
            raise ConfigError("network sizes must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        d = dict(d)
        if "eval_taus" in d:
            d["eval_taus"] = tuple(d["eval_taus"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_taus"] = list(self.eval_taus)
        return d


@dataclass
class LossBundle:
    struct_loss: torch.Tensor
    tagger_loss: torch.Tensor
    adversary_loss: torch.Tensor
    total: torch.Tensor
    lam: float

    def as_floats(self) -> dict:
        return {
            "struct": self.struct_loss.item(),
            "tagger": self.tagger_loss.item(),
            "adversary": self.adversary_loss.item(),
            "total": self.total.item(),
        }


def struct_hinge_loss(scores: torch.Tensor, gold: Segmentation, tau: int) -> torch.Tensor:
    """Differentiable structural hinge: only the gold and loss-augmented entries carry gradient."""
    cfg = TaskLossConfig(tau)
    s = scores.detach().double().numpy()
    worst = loss_augmented_decode(s, gold, cfg)
    margin = task_loss(gold, worst, cfg)
    d1 = scores[worst.y1 - 1, 0] - scores[gold.y1 - 1, 0]
    d2 = scores[worst.y2 - 1, 1] - scores[gold.y2 - 1, 1]
    # the maximiser never scores below gold; clamp only absorbs rounding in low precision
    return torch.clamp(margin + d1 + d2, min=0.0)


def joint_loss(
    scores: torch.Tensor,
    gold: Segmentation,
    tau: int,
    lam: float,
    tag_logits: torch.Tensor | None = None,
    vot_type: str | None = None,
    adv_logits: torch.Tensor | None = None,
    corpus_index: int | None = None,
) -> LossBundle:
    struct = struct_hinge_loss(scores, gold, tau)
    zero = scores.new_zeros(())
    tagger = zero
    if tag_logits is not None:
        target = torch.tensor(TYPE_INDEX[vot_type])
        tagger = F.cross_entropy(tag_logits.unsqueeze(0), target.unsqueeze(0))
    adversary = zero
    if adv_logits is not None:
        target = torch.tensor(corpus_index)
        adversary = F.cross_entropy(adv_logits.unsqueeze(0), target.unsqueeze(0))
    total = struct + tagger + lam * adversary
    return LossBundle(struct, tagger, adversary, total, lam)


@dataclass
class Example:
    """Normalised tensor input plus targets for one training utterance."""

    utterance: Utterance
    x: torch.Tensor
    gold: Segmentation
    vot_type: str
    corpus_index: int | None


def utterance_loss(example: Example, net: VotNet, config: TrainConfig) -> LossBundle:
    if example.gold is None or example.vot_type is None:
        raise DataError(f"{example.utterance.record.utterance_id}: missing gold annotation")
    H = net.encode(example.x)
    scores = net.score_frames(H, net.head_for(example.vot_type))
    tag_logits = adv_logits = None
    if net.tagger is not None or net.adversary is not None:
        summary = net.summarize(H)
        if net.tagger is not None:
            tag_logits = net.tag_logits(summary)
        if net.adversary is not None:
            adv_logits = net.adversary_logits(summary, reverse=net.reverse_adversary_gradient)
    return joint_loss(
        scores,
        example.gold,
        config.tau_frames,
        config.lam,
        tag_logits,
        example.vot_type,
        adv_logits,
        example.corpus_index,
    )


def sampling_weights(labels: Sequence[str]) -> np.ndarray:
    """Per-example draw probabilities giving every class equal expected mass."""
    labels = list(labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ConfigError(
            f"class balancing needs examples of both VOT types, found only {list(classes)}; "
            "disable balancing or add examples"
        )
    w = 1.0 / counts[inverse]
    return w / w.sum()


class EarlyStopping:
    """Tracks the best (lowest) validation value.

    ``update`` returns True once more than ``patience`` consecutive epochs have
    failed to improve on the best.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs > self.patience


@dataclass
class TrainResult:
    model: VotModel
    log: list
    best_epoch: int
    stopped_early: bool


def _torch_dtype(name):
    return torch.float64 if name == "float64" else torch.float32


def prepare_examples(utts: Sequence[Utterance], model: VotModel) -> list[Example]:
    out = []
    index = {c: i for i, c in enumerate(model.corpora)}
    for u in utts:
        ann = u.record.annotation
        if ann is None:
            raise DataError(f"{u.record.utterance_id}: training requires a gold annotation")
        x = torch.as_tensor(apply_norm(u.features, model.norm).frames, dtype=model.net.dtype)
        out.append(Example(u, x, u.gold, ann.vot_type, index.get(u.record.corpus_id)))
    return out


def predict_all(model: VotModel, utts: Sequence[Utterance]) -> dict:
    return {u.record.utterance_id: model.predict(u.features) for u in utts}


def validation_metrics(model: VotModel, utts: Sequence[Utterance], config: TrainConfig) -> dict:
    preds = predict_all(model, utts)
    cfg = TaskLossConfig(config.tau_frames)
    losses = [task_loss(u.gold, preds[u.record.utterance_id].boundaries, cfg) for u in utts]
    golds = {u.record.utterance_id: u.record.annotation for u in utts}
    table = tolerance_table(preds, golds, config.eval_taus)
    return {
        "val_task_loss": float(np.mean(losses)),
        "val_proportion": {str(t): v for t, v in table.strata["all"].items()},
        "val_type_accuracy": classification_accuracy(preds, golds),
    }


def build_model(train_utts: Sequence[Utterance], config: TrainConfig) -> VotModel:
    """Fresh network and normalisation fitted on the training split."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        norm = fit_norm([u.features for u in train_utts])
    for w in caught:
        log.warning("%s", w.message)
    corpora = sorted({u.record.corpus_id for u in train_utts})
    use_adv = config.use_adversary and config.lam > 0
    if use_adv and len(corpora) < 2:
        log.warning("only one training corpus (%s); adversary branch disabled", corpora[0])
        use_adv = False
    torch.manual_seed(int(np.random.default_rng([config.seed, 1]).integers(2**31)))
    net = VotNet(
        norm.output_dim,
        config.hidden_size,
        config.num_layers,
        n_corpora=len(corpora) if use_adv else 0,
        branch_width=config.branch_width,
        use_tagger=config.use_tagger,
        use_adversary=use_adv,
    ).to(_torch_dtype(config.dtype))
    return VotModel(net, norm, corpora if use_adv else [], config.lam, config.tau_frames, config.seed)


def train(
    train_utts: Sequence[Utterance],
    val_utts: Sequence[Utterance],
    config: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit a model, keeping the parameters with the lowest validation task loss."""
    config.validate()
    if not train_utts:
        raise DataError("training split is empty")
    if not val_utts:
        raise DataError("validation split is empty")
    model = build_model(train_utts, config)
    net = model.net
    examples = prepare_examples(train_utts, model)
    rng = np.random.default_rng([config.seed, 2])
    probs = sampling_weights([e.vot_type for e in examples]) if config.balance_classes else None
    opt = torch.optim.Adagrad(net.parameters(), lr=config.learning_rate)

    stopper = EarlyStopping(config.patience)
    best_state = copy.deepcopy(net.state_dict())
    history = []
    stopped = False
    n = len(examples)
    for epoch in range(1, config.max_epochs + 1):
        net.train()
        order = rng.choice(n, size=n, replace=True, p=probs) if probs is not None else rng.permutation(n)
        sums = {"struct": 0.0, "tagger": 0.0, "adversary": 0.0, "total": 0.0}
        for i in order:
            opt.zero_grad()
            bundle = utterance_loss(examples[i], net, config)
            bundle.total.backward()
            opt.step()
            for k, v in bundle.as_floats().items():
                sums[k] += v
        net.eval()
        record = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        record.update(validation_metrics(model, val_utts, config))
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        stop = stopper.update(epoch, record["val_task_loss"])
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(net.state_dict())
        if stop:
            stopped = True
            break
    net.load_state_dict(best_state)
    net.eval()
    return TrainResult(model, history, stopper.best_epoch, stopped)


def write_log(path, config: TrainConfig, history: Sequence[dict]) -> None:
    lines = [json.dumps({"kind": "header", "seed": config.seed, "config": config.to_dict()}, sort_keys=True)]
    lines += [json.dumps({"kind": "epoch", **r}, sort_keys=True) for r in history]
    with open(path, "w") as f:
        f.write("".join(line + "\n" for line in lines))


@dataclass
class FoldResult:
    left_out: str
    train_corpora: list
    within: ToleranceTable
    unseen: ToleranceTable
    within_type_accuracy: float
    unseen_type_accuracy: float
    train_result: TrainResult
    within_test: list = field(repr=False, default_factory=list)
    unseen_test: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "left_out": self.left_out,
            "train_corpora": self.train_corpora,
            "within": self.within.to_dict(),
            "unseen": self.unseen.to_dict(),
            "within_type_accuracy": self.within_type_accuracy,
            "unseen_type_accuracy": self.unseen_type_accuracy,
            "best_epoch": self.train_result.best_epoch,
        }


def cross_validate(
    corpora: Mapping[str, Sequence[Utterance]],
    config: TrainConfig,
    fractions=(0.8, 0.1, 0.1),
    folds: Sequence[str] | None = None,
    on_epoch: Callable[[str, dict], None] | None = None,
) -> list[FoldResult]:
    """Leave-one-corpus-out evaluation.

    Each training corpus is split by speaker; the model is scored on the
    held-out speakers of the training corpora (within) and on every utterance of
    the left-out corpus (unseen).
    """
    names = sorted(corpora)
    if len(names) < 2:
        raise ConfigError(f"cross-validation needs at least 2 corpora, got {len(names)}")
    splits = {c: split_by_speaker(corpora[c], fractions, seed=config.seed) for c in names}
    results = []
    for left_out in folds or names:
        if left_out not in corpora:
            raise ConfigError(f"unknown corpus {left_out!r}")
        train_names = [c for c in names if c != left_out]
        tr = [u for c in train_names for u in splits[c][0]]
        va = [u for c in train_names for u in splits[c][1]]
        te = [u for c in train_names for u in splits[c][2]]
        unseen = list(corpora[left_out])
        cb = None if on_epoch is None else (lambda rec, name=left_out: on_epoch(name, rec))
        result = train(tr, va, config, on_epoch=cb)
        golds_w = {u.record.utterance_id: u.record.annotation for u in te}
        golds_u = {u.record.utterance_id: u.record.annotation for u in unseen}
        pred_w = predict_all(result.model, te)
        pred_u = predict_all(result.model, unseen)
        results.append(
            FoldResult(
                left_out=left_out,
                train_corpora=train_names,
                within=tolerance_table(pred_w, golds_w, config.eval_taus, label="within-corpus"),
                unseen=tolerance_table(pred_u, golds_u, config.eval_taus, label="unseen-corpus"),
                within_type_accuracy=classification_accuracy(pred_w, golds_w),
                unseen_type_accuracy=classification_accuracy(pred_u, golds_u),
                train_result=result,
                within_test=te,
                unseen_test=unseen,
            )
        )
    return results
