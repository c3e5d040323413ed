import math
import statistics

import pytest
from hypothesis import given, strategies as st

from ampf.errors import FlowKeyMismatch, InsufficientData, OrderingError, TraceParseError
from ampf.flows import (BACKWARD, FEATURE_NAMES, FORWARD, FeatureVector, FlowKey,
                        FlowRecord, LabeledExample, PacketRecord, RunningStats,
                        extract_features, fold_packets, key_of, read_traces,
                        update_flow, write_traces)

KEY = FlowKey("H1", "H2", "f")


def fwd(t, size=100):
    return PacketRecord(t, "H1", "H2", size, "f", FORWARD)


def bwd(t, size=60):
    return PacketRecord(t, "H2", "H1", size, "f", BACKWARD)


def test_first_packet_has_no_interarrival():
    rec = update_flow(FlowRecord(KEY), fwd(0.0))
    assert rec.fwd_packet_count == 1
    assert rec.fwd_byte_count == 100
    assert rec.fwd_interarrival_stats.count == 0


def test_second_packet_single_sample_stats():
    rec = fold_packets(KEY, [fwd(0.0), fwd(0.5)])
    s = rec.fwd_interarrival_stats
    assert s.min == s.mean == s.max == 0.5


def test_update_flow_is_pure():
    rec = FlowRecord(KEY)
    update_flow(rec, fwd(0.0))
    assert rec.fwd_packet_count == 0


def test_uniform_spacing_oracle():
    pkts = [fwd(i * 0.01) for i in range(50)]
    iats = [b.timestamp - a.timestamp for a, b in zip(pkts, pkts[1:])]
    fv = extract_features(fold_packets(KEY, pkts))
    assert fv.mean_fwd_iat == pytest.approx(statistics.fmean(iats), rel=1e-12)
    assert fv.mean_fwd_iat == pytest.approx(0.01, rel=1e-9)
    assert fv.std_fwd_iat == pytest.approx(statistics.pstdev(iats), abs=1e-12)


def test_key_mismatch_rejected():
    with pytest.raises(FlowKeyMismatch):
        update_flow(FlowRecord(FlowKey("H1", "H2", "other")), fwd(0.0))


def test_out_of_order_rejected():
    rec = fold_packets(KEY, [fwd(1.0)])
    with pytest.raises(OrderingError):
        update_flow(rec, fwd(0.5))


def test_backward_packet_keys_to_initiator():
    assert key_of(bwd(0.1)) == KEY


def test_two_packet_features():
    fv = extract_features(fold_packets(KEY, [fwd(0.0), fwd(1.0)]))
    assert (fv.duration, fv.mean_fwd_iat, fv.std_fwd_iat, fv.mean_fwd_pkt_len) == (1.0, 1.0, 0.0, 100.0)


def test_no_backward_packets_gives_zero_f7():
    fv = extract_features(fold_packets(KEY, [fwd(0.0), fwd(1.0)]))
    assert fv.mean_bwd_pkt_len == 0.0


def test_backward_lengths_feed_f7():
    fv = extract_features(fold_packets(KEY, [fwd(0.0), bwd(0.2, 40), bwd(0.3, 80), fwd(1.0)]))
    assert fv.mean_bwd_pkt_len == 60.0
    assert fv.duration == 1.0


def test_cbr_interarrival_arithmetic():
    gap = 1250 * 8 / 1e6
    fv = extract_features(fold_packets(KEY, [fwd(i * gap, 1250) for i in range(20)]))
    assert fv.mean_fwd_iat == pytest.approx(0.01, rel=1e-9)


def test_insufficient_forward_packets():
    with pytest.raises(InsufficientData):
        extract_features(fold_packets(KEY, [fwd(0.0), bwd(0.1)]))


def test_feature_vector_has_no_port_or_protocol():
    assert len(FEATURE_NAMES) == 7
    assert not any("port" in n or "proto" in n for n in FEATURE_NAMES)


def test_feature_vector_rejects_negative():
    with pytest.raises(ValueError):
        FeatureVector(1, 1, 1, 1, 1, 1, -1)


def test_packet_record_validation():
    with pytest.raises(ValueError):
        PacketRecord(0.0, "a", "b", 0, "f")
    with pytest.raises(ValueError):
        PacketRecord(-1.0, "a", "b", 10, "f")


packet_lists = st.lists(
    st.tuples(st.floats(0, 1.0, allow_nan=False), st.integers(1, 1500), st.booleans()),
    min_size=2, max_size=60)


def _packets(raw):
    t = 0.0
    out = []
    for gap, size, forward in raw:
        t += gap
        out.append(fwd(t, size) if forward else bwd(t, size))
    return out


@given(packet_lists)
def test_fold_matches_batch_recomputation(raw):
    pkts = _packets(raw)
    rec = fold_packets(KEY, pkts)
    f = [p for p in pkts if p.direction == FORWARD]
    b = [p for p in pkts if p.direction == BACKWARD]
    assert rec.fwd_packet_count == len(f)
    assert rec.bwd_packet_count == len(b)
    assert rec.fwd_byte_count == sum(p.size for p in f)
    assert rec.last_ts == pkts[-1].timestamp and rec.first_ts == pkts[0].timestamp
    if len(f) >= 2:
        iats = [y.timestamp - x.timestamp for x, y in zip(f, f[1:])]
        s = rec.fwd_interarrival_stats
        assert s.mean == pytest.approx(statistics.fmean(iats), rel=1e-9, abs=1e-12)
        assert s.std == pytest.approx(statistics.pstdev(iats), rel=1e-7, abs=1e-9)
        assert s.min == min(iats) and s.max == max(iats)
        fv = extract_features(rec)
        assert fv.min_fwd_iat <= fv.mean_fwd_iat + 1e-12
        assert fv.mean_fwd_iat <= fv.max_fwd_iat + 1e-12
        assert all(math.isfinite(v) and v >= 0 for v in fv.as_tuple())


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=100))
def test_welford_matches_direct_summation(xs):
    s = RunningStats()
    for x in xs:
        s = s.push(x)
    assert s.count == len(xs)
    assert s.mean == pytest.approx(math.fsum(xs) / len(xs), rel=1e-9, abs=1e-6)
    assert s.std == pytest.approx(statistics.pstdev(xs), rel=1e-6, abs=1e-6)


def test_trace_roundtrip(tmp_path):
    ex = [LabeledExample(FeatureVector(1.5, 0.01, 0.002, 0.005, 0.02, 1200.0, 60.0), 2),
          LabeledExample(FeatureVector(0.1, 0.001, 0.0, 0.001, 0.001, 1460.0, 0.0), 4)]
    p = tmp_path / "t.csv"
    write_traces(p, ex)
    assert read_traces(p) == ex


def test_trace_parse_error_is_line_numbered(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("label,f1,f2,f3,f4,f5,f6,f7\n1,1,1,1,1,1,1,1\n2,1,1,x,1,1,1,1\n")
    with pytest.raises(TraceParseError) as info:
        read_traces(p)
    assert info.value.lineno == 3
    assert ":3:" in str(info.value)


def test_trace_bad_label(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("label,f1,f2,f3,f4,f5,f6,f7\n9,1,1,1,1,1,1,1\n")
    with pytest.raises(TraceParseError):
        read_traces(p)
