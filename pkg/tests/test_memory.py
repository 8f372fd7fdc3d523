import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import obj, sample, scene
from oracles import exhaustive_top_k
from dualdrive.actions import MetaAction
from dualdrive.memory import (
    BankFormatError, EncoderMismatchError, ExperienceSample, HashedBagEncoder, MemoryBank,
    compress_caption, cosine_similarity, distance_bucket, embed, load, persist, query_top_k,
)


def random_bank(rng, m, dim=16):
    bank = MemoryBank(HashedBagEncoder(dim), dedup=False)
    placeholder = sample(scene())
    for _ in range(m):
        bank.add(placeholder, rng.normal(size=dim))
    return bank


# -- captions ---------------------------------------------------------------

def test_caption_examples():
    assert compress_caption(scene()) == "none"
    assert compress_caption(scene(obj(distance=12.3, motion="toward"))) == "vehicle|ego_lane|10-15m|toward"
    two = scene(obj(distance=30.0), obj("pedestrian", lane="right_lane", distance=8.0, motion="static"))
    assert compress_caption(two) == "pedestrian|right_lane|5-10m|static;vehicle|ego_lane|30-35m|toward"
    light = scene(obj("traffic_light", state="red", distance=4.99, motion="static"))
    assert compress_caption(light) == "traffic_light_red|ego_lane|0-5m|static"


@pytest.mark.parametrize("d, bucket", [(0.0, "0-5m"), (4.999, "0-5m"), (5.0, "5-10m"), (59.9, "55-60m")])
def test_distance_bucket(d, bucket):
    assert distance_bucket(d) == bucket


# -- embeddings --------------------------------------------------------------

def test_embed_deterministic_and_unit():
    a, b = embed("vehicle|ego_lane|10-15m|toward"), embed("vehicle|ego_lane|10-15m|toward")
    assert np.array_equal(a.vector, b.vector)
    assert np.linalg.norm(a.vector) == pytest.approx(1.0, abs=1e-9)
    assert a.encoder_id == HashedBagEncoder().encoder_id


def test_disjoint_captions_near_orthogonal():
    enc = HashedBagEncoder()
    a, b = "vehicle|ego_lane|10-15m|toward", "pedestrian|roadside|35-40m|crossing_left"
    shared = {enc.bucket(t) for t in a.split("|")} & {enc.bucket(t) for t in b.split("|")}
    sim = cosine_similarity(embed(a), embed(b))
    assert sim < 0.1
    if not shared:
        assert sim == 0.0


def test_embedding_rejects_non_finite():
    from dualdrive.memory import Embedding
    with pytest.raises(ValueError):
        Embedding(np.array([1.0, np.nan]), "x")


# -- cosine -------------------------------------------------------------------

def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(0.70711, abs=1e-5)
    assert cosine_similarity([0, 0], [1, 0]) == 0.0
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3)


@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(q, e, alpha):
    a = cosine_similarity(np.array(q) * alpha, e)
    assert a == pytest.approx(cosine_similarity(q, e), abs=1e-9)
    assert -1.0 <= a <= 1.0


@given(vec, vec)
def test_cosine_symmetric(a, b):
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)


# -- retrieval ----------------------------------------------------------------

def test_query_edge_cases():
    bank = random_bank(np.random.default_rng(0), 2)
    q = np.ones(16)
    assert query_top_k(bank, q, 0) == []
    assert [h.index for h in query_top_k(bank, q, 5)] == exhaustive_top_k(bank.matrix.tolist(), q, 5)
    assert len(query_top_k(bank, q, 5)) == 2
    assert query_top_k(MemoryBank(), embed("x"), 3) == []
    with pytest.raises(ValueError):
        query_top_k(bank, q, -1)
    with pytest.raises(ValueError):
        query_top_k(bank, np.ones(3), 1)


def test_query_matches_exhaustive_scan():
    rng = np.random.default_rng(7)
    bank = random_bank(rng, 1000)
    for _ in range(5):
        q = rng.normal(size=16)
        hits = query_top_k(bank, q, 3)
        assert [h.index for h in hits] == exhaustive_top_k(bank.matrix.tolist(), q.tolist(), 3)
        scores = [h.score for h in hits]
        assert scores == sorted(scores, reverse=True)


def test_ties_keep_insertion_order():
    bank = MemoryBank(HashedBagEncoder(4), dedup=False)
    for i in range(5):
        bank.add(sample(scene(), source=str(i)), [1.0, 0.0, 0.0, 0.0])
    assert [h.index for h in bank.query(np.array([1.0, 0, 0, 0]), 3)] == [0, 1, 2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_top_k_invariant_under_query_scaling(seed, alpha):
    rng = np.random.default_rng(seed)
    bank = random_bank(rng, 50)
    q = rng.normal(size=16)
    assert [h.index for h in bank.query(q, 10)] == [h.index for h in bank.query(q * alpha, 10)]


# -- insert / dedup ------------------------------------------------------------

def test_insert_and_dedup():
    bank = MemoryBank()
    s = sample(scene(obj(distance=12.0)), MetaAction.DC)
    assert bank.insert(s).inserted and len(bank) == 1
    again = bank.insert(sample(scene(obj(distance=13.0)), MetaAction.DC))   # same caption
    assert not again.inserted and again.duplicate_of == 0 and len(bank) == 1
    assert bank.insert(sample(scene(obj(distance=12.0)), MetaAction.STOP)).inserted
    assert len(bank) == 2


def test_dedup_off_keeps_everything():
    bank = MemoryBank(dedup=False)
    for _ in range(3):
        bank.insert(sample(scene(obj()), MetaAction.DC))
    assert len(bank) == 3


def test_sample_invariants():
    with pytest.raises(ValueError):
        ExperienceSample(scene(), "  ", MetaAction.AC)
    with pytest.raises(ValueError):
        ExperienceSample(scene(), "r", MetaAction.AC, provenance="dream")


def test_add_dimension_checked():
    with pytest.raises(ValueError):
        MemoryBank().add(sample(scene()), np.ones(3))


def test_subsample_every_other():
    bank = MemoryBank(dedup=False)
    for i in range(20):
        bank.add(sample(scene(), source=f"s{i}"), np.eye(256)[i])
    half = bank.subsample(10)
    assert [s.source for s in half.samples] == [f"s{i}" for i in range(0, 20, 2)]
    assert len(bank.subsample(0)) == 0 and len(bank.subsample(50)) == 20


def test_snapshot_is_independent():
    bank = MemoryBank()
    bank.insert(sample(scene(obj())))
    snap = bank.snapshot()
    bank.insert(sample(scene(obj("pedestrian"))))
    assert len(snap) == 1 and len(bank) == 2


# -- persistence --------------------------------------------------------------

def _filled_bank():
    bank = MemoryBank()
    bank.insert(sample(scene(obj(distance=12.0, source_id="a", position=(12.0, 0.0)), speed=4.0),
                       MetaAction.DC, "gap closing", timestamp=3.0))
    bank.insert(sample(scene(obj("traffic_light", state="red", motion="static")), MetaAction.STOP,
                       "red light", provenance="reflection"))
    return bank


def test_persist_load_round_trip(tmp_path):
    bank = _filled_bank()
    path = tmp_path / "bank.jsonl"
    persist(bank, path)
    back = load(path)
    assert back == bank
    assert back.samples[1].provenance == "reflection"


def test_load_wrong_version(tmp_path):
    path = tmp_path / "bank.jsonl"
    _filled_bank().persist(path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["format_version"] = 99
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(BankFormatError, match="format_version"):
        load(path)


def test_load_encoder_mismatch(tmp_path):
    path = tmp_path / "bank.jsonl"
    _filled_bank().persist(path)

    class Other(HashedBagEncoder):
        def __init__(self):
            super().__init__(256)
            self.encoder_id = "other-encoder"

    with pytest.raises(EncoderMismatchError):
        load(path, Other())
    assert len(load(path, Other(), strict=False)) == 2
    with pytest.raises(EncoderMismatchError):
        load(path, HashedBagEncoder(64), strict=False)


def test_load_corrupt_record(tmp_path):
    path = tmp_path / "bank.jsonl"
    _filled_bank().persist(path)
    path.write_text(path.read_text() + '{"reasoning": "x"}\n')
    with pytest.raises(BankFormatError, match=":4"):
        load(path)


def test_bank_pickles():
    import pickle
    bank = _filled_bank()
    assert pickle.loads(pickle.dumps(bank)) == bank
