import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualsteer import SoftmaxModel, load_model, make_model, restrict_top_k, save_model, softmax_probs
from dualsteer.errors import (
    DuplicateLabels,
    KOutOfRange,
    MalformedHeader,
    NonFiniteEntries,
    PayloadTruncated,
    VocabularyTooSmall,
)


def write_sgm(path, header, floats):
    path.write_bytes(json.dumps(header).encode() + b"\n" + np.asarray(floats, "<f8").tobytes())


def test_load_hand_written_file(tmp_path):
    p = tmp_path / "m.sgm"
    write_sgm(p, {"version": 1, "V": 3, "d": 2, "labels": ["a", "b", "c"]}, [1, 0, 0, 1, 0, 0])
    m = load_model(p)
    assert m.labels == ("a", "b", "c")
    np.testing.assert_array_equal(m.gamma, [[1, 0], [0, 1], [0, 0]])


def test_truncated_payload(tmp_path):
    p = tmp_path / "m.sgm"
    write_sgm(p, {"V": 3, "d": 2, "labels": ["a", "b", "c"]}, [1, 0, 0, 1, 0])
    with pytest.raises(PayloadTruncated):
        load_model(p)


def test_vocabulary_too_small(tmp_path):
    p = tmp_path / "m.sgm"
    write_sgm(p, {"V": 1, "d": 2, "labels": ["a"]}, [1, 0])
    with pytest.raises(VocabularyTooSmall):
        load_model(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "m.sgm"
    p.write_bytes(b"not json\n")
    with pytest.raises(MalformedHeader):
        load_model(p)


def test_non_finite_and_duplicate_labels():
    with pytest.raises(NonFiniteEntries):
        make_model([[np.nan, 0], [0, 1]])
    with pytest.raises(DuplicateLabels):
        SoftmaxModel(("a", "a"), np.eye(2))


def test_t1_round_trip(tmp_path, t1):
    p = tmp_path / "t1.sgm"
    save_model(t1, p)
    back = load_model(p)
    assert back == t1
    assert back.gamma.tobytes() == t1.gamma.tobytes()


def test_inline_variant_round_trip(tmp_path, t1):
    p = tmp_path / "t1.sgm"
    save_model(t1, p, inline=True)
    assert load_model(p) == t1


def test_utf8_labels(tmp_path):
    m = make_model(np.eye(2), ["père", "mère"])
    p = tmp_path / "u.sgm"
    save_model(m, p)
    assert load_model(p).labels == ("père", "mère")


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_read_only_destination_leaves_nothing(tmp_path, t1):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    try:
        with pytest.raises(OSError):
            save_model(t1, d / "m.sgm")
        assert list(d.iterdir()) == []
    finally:
        d.chmod(0o700)


def test_failed_write_leaves_no_partial_file(tmp_path, t1, monkeypatch):
    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("dualsteer.model.os.replace", boom)
    with pytest.raises(OSError):
        save_model(t1, tmp_path / "m.sgm")
    assert list(tmp_path.iterdir()) == []


def test_gamma_is_read_only(t1):
    with pytest.raises(ValueError):
        t1.gamma[0, 0] = 5.0


def test_restrict_top_k_tie_breaks_by_index(t1):
    sub, keep = restrict_top_k(t1, [np.log(2), 0.0], 2)
    assert sub.labels == ("a", "b")
    np.testing.assert_array_equal(keep, [0, 1])


def test_restrict_top_k_identity(t1):
    sub, keep = restrict_top_k(t1, [0.3, -0.2], 3)
    assert sub == t1
    np.testing.assert_array_equal(keep, [0, 1, 2])


def test_restrict_top_k_mass(rng):
    m = make_model(rng.standard_normal((50, 4)))
    lam = rng.standard_normal(4)
    p = softmax_probs(m, lam)
    _, keep = restrict_top_k(m, lam, 10)
    assert abs(p[keep].sum() - np.sort(p)[-10:].sum()) < 1e-15


def test_restrict_top_k_range(t1):
    for k in (1, 4):
        with pytest.raises(KOutOfRange):
            restrict_top_k(t1, [0, 0], k)


finite = st.floats(-1e6, 1e6, allow_nan=False, width=64)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=finite))
def test_save_load_identity_property(tmp_path_factory, gamma):
    m = make_model(gamma)
    p = tmp_path_factory.mktemp("sgm") / "m.sgm"
    save_model(m, p)
    back = load_model(p)
    assert back.labels == m.labels
    assert back.gamma.tobytes() == m.gamma.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 4), st.data())
def test_restrict_keeps_rows_and_order(seed, V, d, data):
    r = np.random.default_rng(seed)
    m = make_model(r.standard_normal((V, d)))
    k = data.draw(st.integers(2, V))
    sub, keep = restrict_top_k(m, r.standard_normal(d), k)
    assert np.all(np.diff(keep) > 0)
    np.testing.assert_array_equal(sub.gamma, m.gamma[keep])
