import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdlock.analysis import (
    JointDistribution,
    SuccessResult,
    accumulate_joint,
    allocation_table,
    binomial_success,
    emit_tables,
    joint_from_arrays,
    joint_table,
    keyrate_table,
    mutual_information,
    packet_success_experiment,
    plugin_bias,
    read_joint_table,
    success_table,
    symmetric_channel_mi,
)
from qdlock.protocol import ChannelConfig, TranscriptRecord

# 6 - h(0.1) - 0.1 log2(63), evaluated once and frozen
SYMMETRIC_MI_0_1 = 4.933276414060727


def records(sent, detected, erased=None):
    erased = erased if erased is not None else [False] * len(sent)
    return [TranscriptRecord(i, int(a), 0, int(b), bool(e), "Bob")
            for i, (a, b, e) in enumerate(zip(sent, detected, erased))]


def symmetric_matrix(p):
    m = np.full((64, 64), p / 63 / 64)
    np.fill_diagonal(m, (1 - p) / 64)
    return m


# ---- joint


def test_empty_transcript_gives_zero_matrix():
    j = accumulate_joint([])
    assert j.total == 0 and not j.counts.any()
    with pytest.raises(ValueError):
        j.normalized()


def test_noiseless_transcript_is_diagonal():
    sent = np.arange(64).repeat(3)
    j = accumulate_joint(records(sent, sent))
    assert np.array_equal(j.counts, 3 * np.eye(64, dtype=int))
    assert j.diagonal_mass() == 1.0
    assert j.normalized().sum() == pytest.approx(1.0)


def test_erasures_are_excluded():
    j = accumulate_joint(records([1, 2, 3], [1, 2, 3], [False, True, False]))
    assert j.total == 2 and j.counts[2, 2] == 0
    k = joint_from_arrays([1, 2, 3], [1, 2, 3], erased=[False, True, False])
    assert np.array_equal(j.counts, k.counts)


@given(st.lists(st.tuples(st.integers(0, 63), st.integers(0, 63)), max_size=200), st.randoms())
def test_accumulation_is_order_independent(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = accumulate_joint(records(*zip(*pairs))) if pairs else accumulate_joint([])
    b = accumulate_joint(records(*zip(*shuffled))) if pairs else accumulate_joint([])
    assert np.array_equal(a.counts, b.counts) and a.total == len(pairs)


def test_joints_merge_by_addition():
    a = joint_from_arrays([0, 1], [0, 2])
    b = joint_from_arrays([1], [2])
    assert (a + b).counts[1, 2] == 2 and (a + b).total == 3


def test_joint_validation():
    with pytest.raises(ValueError):
        JointDistribution(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        JointDistribution(-np.ones((64, 64)))


# ---- mutual information


def test_identity_is_six_bits():
    assert mutual_information(np.eye(64) / 64) == 6.0
    assert mutual_information(JointDistribution(np.eye(64, dtype=int))) == 6.0


def test_product_uniform_is_zero():
    assert mutual_information(np.full((64, 64), 1 / 4096)) == 0.0


def test_symmetric_channel_closed_form():
    # exact table through the generic estimator vs the closed form
    assert mutual_information(symmetric_matrix(0.1)) == pytest.approx(SYMMETRIC_MI_0_1, abs=1e-12)
    assert symmetric_channel_mi(0.1) == pytest.approx(SYMMETRIC_MI_0_1, abs=1e-12)
    assert symmetric_channel_mi(0.0) == 6.0
    assert symmetric_channel_mi(63 / 64) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        symmetric_channel_mi(1.5)


@given(st.integers(0, 2**32))
def test_mi_bounds(seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 5, (64, 64)) * (rng.random((64, 64)) < rng.random())
    counts[0, 0] += 1
    mi = mutual_information(JointDistribution(counts))
    assert 0.0 <= mi <= 6.0 + 1e-12


@given(st.permutations(range(64)))
def test_permutation_matrix_reaches_six_bits(perm):
    m = np.zeros((64, 64))
    m[np.arange(64), perm] = 1 / 64
    assert mutual_information(m) == pytest.approx(6.0, abs=1e-12)


@given(st.integers(0, 2**32))
def test_non_permutation_stays_below_six(seed):
    rng = np.random.default_rng(seed)
    m = np.eye(64)
    i, j = rng.choice(64, 2, replace=False)
    m[i, j] = rng.uniform(0.01, 1)
    assert mutual_information(m / m.sum()) < 6.0 - 1e-6


@given(st.integers(0, 2**32), st.permutations(range(64)))
def test_mi_invariant_under_relabelling(seed, perm):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 20, (64, 64))
    p = np.asarray(perm)
    a = mutual_information(JointDistribution(counts))
    b = mutual_information(JointDistribution(counts[np.ix_(p, p)]))
    assert a == pytest.approx(b, abs=1e-12)


def test_miller_madow_reduces_bias():
    rng = np.random.default_rng(1)
    n = 20_000
    sent = rng.integers(0, 64, n)
    det = rng.integers(0, 64, n)
    j = joint_from_arrays(sent, det)
    plug = mutual_information(j)
    mm = mutual_information(j, "miller-madow")
    assert plug == pytest.approx(plugin_bias(4096, n) - plugin_bias(64, n) * 2, rel=0.2)
    assert abs(mm) < plug / 5
    with pytest.raises(ValueError):
        mutual_information(j, "jackknife")
    with pytest.raises(ValueError):
        mutual_information(np.zeros((64, 64)))


# ---- packet success


def test_binomial_oracle_values():
    assert binomial_success(35, 0.1) == pytest.approx(0.99885, abs=1e-5)
    assert binomial_success(61, 0.1) == pytest.approx((0.9**63 + 63 * 0.1 * 0.9**62), rel=1e-12)
    assert binomial_success(35, 0.0) == 1.0


@pytest.mark.parametrize("x", [35, 51, 61])
def test_noiseless_packets_always_succeed(x):
    r = packet_success_experiment(x, ChannelConfig(p_err=0.0), 30, np.random.default_rng(x))
    assert r.rate == 1.0 and r.within()


def test_high_rate_code_tracks_oracle():
    r = packet_success_experiment(61, ChannelConfig(p_err=0.1), 2000, np.random.default_rng(2))
    assert r.oracle == pytest.approx(0.0105, abs=1e-3)
    assert r.within(3), (r.rate, r.oracle, r.stderr)


def test_losses_count_as_symbol_errors_in_the_oracle():
    cfg = ChannelConfig(p_err=0.05, p_loss=0.1)
    r = packet_success_experiment(45, cfg, 600, np.random.default_rng(3))
    assert r.oracle == pytest.approx(binomial_success(45, 0.05 + 0.1 * 63 / 64))
    assert r.within(3)


def test_success_result_stats():
    r = SuccessResult(35, 126, 64.0, 100, 99, 0.99, 1.0)
    assert r.rate == 0.99 and r.stderr == pytest.approx(math.sqrt(0.99 * 0.01 / 100))
    with pytest.raises(ValueError):
        packet_success_experiment(35, ChannelConfig(), 0, np.random.default_rng(0))


# ---- tables


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_keyrate_table_anchors(tmp_path):
    keyrate_table(tmp_path / "k.csv", [64, 650], [63, 126])
    got = {(int(r["n"]), float(r["d"])): float(r["key_per_photon"]) for r in read_rows(tmp_path / "k.csv")}
    expected = {(63, 64): 1.434, (126, 64): 1.287, (63, 650): 3.757, (126, 650): 3.611}
    for k, v in expected.items():
        assert got[k] == pytest.approx(v, abs=0.005)


def test_allocation_table_structure(tmp_path):
    allocation_table(tmp_path / "a.csv", [64], [63, 126])
    rows = read_rows(tmp_path / "a.csv")
    assert list(rows[0]) == ["x", "n", "d", "redundancy", "newkey", "message", "feasible"]
    assert len(rows) == 2 * 63
    last = [r for r in rows if r["n"] == "63" and r["x"] == "63"][0]
    assert float(last["redundancy"]) == 0.0
    anchor = [r for r in rows if r["n"] == "126" and r["x"] == "35"][0]
    assert float(anchor["message"]) == pytest.approx(1.02, abs=0.01)
    for r in rows:
        total = float(r["redundancy"]) + float(r["newkey"]) + float(r["message"])
        assert total == pytest.approx(6.0)


def test_success_table_capacity(tmp_path):
    r = packet_success_experiment(35, ChannelConfig(p_err=0.1), 40, np.random.default_rng(4))
    success_table(tmp_path / "s.csv", [r])
    row = read_rows(tmp_path / "s.csv")[0]
    assert list(row) == ["x", "n", "d", "packets", "success_rate", "capacity_bits"]
    assert float(row["capacity_bits"]) == pytest.approx(1.02, abs=0.01)


def test_joint_table_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    j = joint_from_arrays(rng.integers(0, 64, 500), rng.integers(0, 64, 500))
    joint_table(tmp_path / "j.csv", j)
    assert np.array_equal(read_joint_table(tmp_path / "j.csv").counts, j.counts)


def test_emit_tables(tmp_path):
    files = emit_tables(tmp_path / "t", keyrate_n=range(1, 200), success_xs=(35, 61), packets=20)
    assert [f.rsplit("/", 1)[-1] for f in files] == ["keyrate.csv", "alloc.csv", "success.csv"]
    assert len(read_rows(files[2])) == 2 * 2 * 2
    again = emit_tables(tmp_path / "u", keyrate_n=range(1, 200), success_xs=(35, 61), packets=20)
    for a, b in zip(files, again):
        assert open(a).read() == open(b).read()
