import json

import numpy as np
import pytest

from votseg.datakit import (
    Annotation,
    ManifestRecord,
    SyntheticConfig,
    corpus_nuisance,
    generate_synthetic,
    load_manifest,
    load_precomputed,
    split_by_speaker,
    threshold_oracle,
    write_feature_file,
    write_manifest,
    write_synthetic,
)
from votseg.errors import ConfigError, DataError, ParseError


def _write_jsonl(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def _rec(uid, ann, feats="f.txt", spk="s1"):
    return {"utterance_id": uid, "corpus_id": "c", "speaker_id": spk, "features": feats, "annotation": ann}


@pytest.fixture
def feat_file(tmp_path):
    write_feature_file(tmp_path / "f.txt", np.zeros((50, 2)) + 1.0)
    return tmp_path


def test_manifest_ordering_error_names_utterance(feat_file):
    _write_jsonl(feat_file / "m.jsonl", [_rec("bad_utt", {"t_pv": 30, "t_b": 20, "t_v": 40})])
    with pytest.raises(DataError, match="bad_utt"):
        load_manifest(feat_file / "m.jsonl")


def test_manifest_positive_without_pv(feat_file):
    _write_jsonl(feat_file / "m.jsonl", [_rec("u", {"t_b": 10, "t_v": 30})])
    (r,) = load_manifest(feat_file / "m.jsonl")
    assert r.annotation.vot_type == "positive"
    assert r.annotation.vot_ms == 20.0


def test_manifest_sentinel_maps_to_absent(feat_file):
    _write_jsonl(feat_file / "m.jsonl", [_rec("u", {"t_pv": -1, "t_b": 10, "t_v": 30})])
    (r,) = load_manifest(feat_file / "m.jsonl")
    assert r.annotation.t_pv is None


def test_manifest_roundtrip(feat_file):
    objs = [_rec(f"u{i}", {"t_pv": None if i else 2.0, "t_b": 10, "t_v": 30}) for i in range(3)]
    _write_jsonl(feat_file / "m.jsonl", objs)
    recs = load_manifest(feat_file / "m.jsonl")
    assert [r.utterance_id for r in recs] == ["u0", "u1", "u2"]
    assert recs[0].annotation.vot_type == "negative"
    write_manifest(feat_file / "m2.jsonl", recs, relative_to=feat_file)
    assert load_manifest(feat_file / "m2.jsonl") == recs


def test_manifest_duplicates_and_missing_files(feat_file):
    objs = [_rec("dup", None), _rec("dup", None), _rec("gone", None, feats="nope.txt")]
    _write_jsonl(feat_file / "m.jsonl", objs)
    with pytest.raises(DataError) as e:
        load_manifest(feat_file / "m.jsonl")
    assert "duplicate" in str(e.value) and "gone" in str(e.value)


def test_manifest_requires_one_source():
    with pytest.raises(DataError):
        ManifestRecord("u", "c", "s")
    with pytest.raises(DataError):
        ManifestRecord("u", "c", "s", features="a", audio="b")


def test_feature_file_format(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("3 2\n1 2\n3 4\n5 6\n")
    x = load_precomputed(p)
    assert x.frames.shape == (3, 2)
    assert x.frames[2, 1] == 6.0


def test_feature_file_short_row(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("3 2\n1 2\n3\n5 6\n")
    with pytest.raises(ParseError) as e:
        load_precomputed(p)
    assert e.value.line == 3


def test_feature_file_bad_header(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("three 2\n1 2\n")
    with pytest.raises(ParseError) as e:
        load_precomputed(p)
    assert e.value.line == 1


def test_feature_file_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(17, 5)) * 10.0 ** rng.integers(-8, 8, size=(17, 5))
    write_feature_file(tmp_path / "x.txt", m)
    assert np.array_equal(load_precomputed(tmp_path / "x.txt").frames, m)


def _speaker_records(n_speakers, per=3):
    return [ManifestRecord(f"u{s}_{k}", "c", f"s{s:02d}", features="x") for s in range(n_speakers) for k in range(per)]


def test_split_counts():
    tr, va, te = split_by_speaker(_speaker_records(10), (0.8, 0.1, 0.1), seed=1)
    assert [len({r.speaker_id for r in part}) for part in (tr, va, te)] == [8, 1, 1]


def test_split_disjoint_and_deterministic():
    recs = _speaker_records(23, per=2)
    a = split_by_speaker(recs, (0.7, 0.15, 0.15), seed=5)
    b = split_by_speaker(recs, (0.7, 0.15, 0.15), seed=5)
    assert a == b
    sets = [{r.speaker_id for r in part} for part in a]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert sum(len(p) for p in a) == len(recs)


def test_split_needs_three_speakers():
    with pytest.raises(ConfigError):
        split_by_speaker(_speaker_records(2), (0.8, 0.1, 0.1))


def test_synthetic_annotations_ordered_and_deterministic():
    cfg = SyntheticConfig(n_utterances=200, seed=11)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    for u, v in zip(a, b):
        assert u.record == v.record
        assert np.array_equal(u.features.frames, v.features.frames)
        assert u.record.annotation.problems(u.features.T) == []
        g = u.gold
        assert g.y2 - g.y1 >= 10


def test_synthetic_class_mixture():
    us = generate_synthetic(SyntheticConfig(n_utterances=2000, negative_fraction=0.2, seed=4))
    frac = np.mean([u.record.annotation.vot_type == "negative" for u in us])
    assert abs(frac - 0.2) < 4 * np.sqrt(0.2 * 0.8 / 2000)


def test_synthetic_bad_fraction():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticConfig(negative_fraction=1.0))


def test_oracle_exact_without_noise():
    for u in generate_synthetic(SyntheticConfig(n_utterances=300, noise_sd=0.0, seed=2)):
        kind, seg = threshold_oracle(u.features.frames)
        assert kind == u.record.annotation.vot_type
        assert seg == u.gold


def test_oracle_with_noise():
    us = generate_synthetic(SyntheticConfig(n_utterances=1000, noise_sd=0.5, seed=9))
    hits = 0
    for u in us:
        kind, seg = threshold_oracle(u.features.frames)
        g = u.gold
        hits += kind == u.record.annotation.vot_type and abs(seg.y1 - g.y1) <= 1 and abs(seg.y2 - g.y2) <= 1
    assert hits / len(us) >= 0.99


def test_corpus_offsets_visible_in_means():
    cfg = SyntheticConfig(n_utterances=1200, n_corpora=4, corpus_gains=[1.0] * 4, seed=6)
    offsets, _ = corpus_nuisance(cfg)
    us = generate_synthetic(cfg)
    means = {}
    for c in range(4):
        rows = np.concatenate([u.features.frames for u in us if u.record.corpus_id == f"corpus{c}"])
        means[c] = rows.mean(axis=0)
    for c in range(1, 4):
        # planted regimes are label-independent, so only the offsets separate corpora
        assert np.allclose(means[c] - means[0], offsets[c] - offsets[0], atol=0.15)


def test_boundaries_independent_of_corpus():
    us = generate_synthetic(SyntheticConfig(n_utterances=4000, n_corpora=2, seed=8))
    from scipy.stats import ks_2samp

    for attr in ("t_b", "t_v"):
        a = [getattr(u.record.annotation, attr) for u in us if u.record.corpus_id == "corpus0"]
        b = [getattr(u.record.annotation, attr) for u in us if u.record.corpus_id == "corpus1"]
        assert ks_2samp(a, b).pvalue > 0.001


def test_write_synthetic_roundtrip(tmp_path):
    us = generate_synthetic(SyntheticConfig(n_utterances=5, seed=1))
    manifest = write_synthetic(us, tmp_path)
    recs = load_manifest(manifest)
    assert [r.utterance_id for r in recs] == [u.record.utterance_id for u in us]
    assert np.array_equal(load_precomputed(recs[0].features).frames, us[0].features.frames)
