import numpy as np
import pytest
import torch

from votseg.encoder import AdversaryNet, VotModel, VotNet, reverse_gradient, select_head
from votseg.errors import ConfigError, DataError, ModelFormatError
from votseg.frontend import NormStats
from votseg.segmentation import FeatureSequence, decode
from votseg.training import TrainConfig, utterance_loss

import gradcheck
from oracles import brute_decode


@pytest.fixture
def net():
    torch.manual_seed(0)
    return VotNet(63, 100, 2, n_corpora=4).double()


def test_encode_shape(net):
    x = torch.randn(5, 63, dtype=torch.float64)
    assert net.encode(x).shape == (5, 200)


def test_encode_deterministic(net):
    x = torch.randn(9, 63, dtype=torch.float64)
    assert torch.equal(net.encode(x), net.encode(x))


def test_encode_dimension_mismatch(net):
    with pytest.raises(DataError):
        net.encode(torch.randn(5, 10, dtype=torch.float64))


def test_last_frame_reaches_first_row(net):
    x = torch.randn(12, 63, dtype=torch.float64)
    y = x.clone()
    y[-1] += 1.0
    assert not torch.allclose(net.encode(x)[0], net.encode(y)[0], atol=0, rtol=0)


def test_score_frames_linear(net):
    H = torch.zeros(7, 200, dtype=torch.float64)
    for head in net.heads.values():
        torch.nn.init.zeros_(head.bias)
    assert torch.count_nonzero(net.score_frames(H, "pos")) == 0
    H = torch.randn(7, 200, dtype=torch.float64)
    assert torch.allclose(net.score_frames(2 * H, "neg"), 2 * net.score_frames(H, "neg"))


def test_score_frames_decode_matches_brute_force(net):
    g = torch.Generator().manual_seed(3)
    for _ in range(20):
        T = int(torch.randint(3, 40, (1,), generator=g))
        H = torch.randn(T, 200, generator=g, dtype=torch.float64)
        s = net.score_frames(H, "pos").detach().numpy()
        assert decode(s).as_tuple() == brute_decode(s)[0]


def test_summary(net):
    x = torch.randn(1, 63, dtype=torch.float64)
    H = net.encode(x)
    assert torch.equal(net.summarize(H), H[0])
    x = torch.randn(8, 63, dtype=torch.float64)
    s = net.summarize(net.encode(x))
    assert s.shape == (200,)
    perm = x[[0, 3, 1, 2, 5, 4, 6, 7]]
    assert not torch.allclose(s, net.summarize(net.encode(perm)))


def test_tagger_probabilities(net):
    s = torch.randn(200, dtype=torch.float64)
    p = net.tag(s)
    assert torch.all(p >= 0) and abs(p.sum().item() - 1) < 1e-6


def test_tag_tie_and_known_logits():
    p = torch.softmax(torch.tensor([0.0, 0.0]), -1)
    assert p.tolist() == [0.5, 0.5]
    assert select_head(p) == "positive"
    p = torch.softmax(torch.tensor([3.0, 1.0], dtype=torch.float64), -1)
    assert p.numpy() == pytest.approx([0.8808, 0.1192], abs=1e-4)
    assert select_head([0.3, 0.7]) == "negative"


def test_adversary_outputs(net):
    s = torch.randn(200, dtype=torch.float64)
    p = net.adversary_predict(s)
    assert p.shape == (4,)
    assert torch.all(p >= 0) and abs(p.sum().item() - 1) < 1e-6
    assert torch.equal(net.adversary_logits(s, reverse=True), net.adversary_logits(s, reverse=False))


def test_adversary_needs_two_corpora():
    with pytest.raises(ConfigError):
        AdversaryNet(10, 5, 1)


def test_reverse_gradient_gate():
    x = torch.randn(4, requires_grad=True)
    (reverse_gradient(x) * torch.arange(4.0)).sum().backward()
    assert torch.equal(x.grad, -torch.arange(4.0))


def _adv_grads(net, x, reverse):
    net.zero_grad()
    H = net.encode(x)
    logits = net.adversary_logits(net.summarize(H), reverse=reverse)
    torch.nn.functional.cross_entropy(logits.unsqueeze(0), torch.tensor([1])).backward()
    return {n: p.grad.clone() for n, p in net.named_parameters() if n.startswith("lstm.")}


def test_reversal_sign_on_encoder():
    net, x = gradcheck.miniature(seed=4)
    on, off = _adv_grads(net, x, True), _adv_grads(net, x, False)
    for name in on:
        assert torch.max(torch.abs(on[name] + off[name])) <= 1e-10


def test_head_isolation():
    net, x = gradcheck.miniature(seed=5)
    H = net.encode(x)
    net.score_frames(H, "pos").sum().backward()
    assert net.heads["neg"].weight.grad is None or torch.count_nonzero(net.heads["neg"].weight.grad) == 0


@pytest.mark.parametrize("gate", [False, True])
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed, gate):
    net, x = gradcheck.miniature(seed=seed)
    net.reverse_adversary_gradient = gate
    for ex in gradcheck.examples_for(x):
        errs = gradcheck.relative_errors(net, ex, TrainConfig(lam=0.1, tau_frames=0))
        assert max(errs.values()) <= 1e-4, errs


def _tiny_model(use_tagger=True):
    torch.manual_seed(1)
    net = VotNet(3, 4, 2, n_corpora=2, branch_width=5, use_tagger=use_tagger)
    norm = NormStats(np.zeros(3), np.ones(3), np.ones(3, bool))
    return VotModel(net, norm, ["a", "b"], 0.1, 2, 7)


def test_save_load_roundtrip(tmp_path):
    m = _tiny_model()
    m.save(tmp_path / "m.pt")
    back = VotModel.load(tmp_path / "m.pt")
    x = FeatureSequence(np.random.default_rng(0).normal(size=(30, 3)))
    assert back.predict(x) == m.predict(x)
    assert back.describe() == m.describe()


def test_load_rejects_other_version(tmp_path):
    m = _tiny_model()
    m.save(tmp_path / "m.pt")
    blob = torch.load(tmp_path / "m.pt", weights_only=True)
    blob["format_version"] = 99
    torch.save(blob, tmp_path / "bad.pt")
    with pytest.raises(ModelFormatError, match="version"):
        VotModel.load(tmp_path / "bad.pt")


def test_predict_without_tagger_uses_positive_head():
    m = _tiny_model(use_tagger=False)
    out = m.predict(FeatureSequence(np.random.default_rng(1).normal(size=(20, 3))))
    assert out.vot_type == "positive" and out.vot_ms > 0
