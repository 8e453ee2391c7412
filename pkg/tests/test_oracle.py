import math
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sspesq.gilbert import LossTrace
from sspesq.oracle import (AudioFormatError, ExternalPesqAdapterConfig, ExternalPesqOracle,
                           ExternalProcessError, OutputParseError, SurrogateOracle,
                           SurrogateParams, batch_assess, degrade_audio, external_assess,
                           parse_score, read_wav, surrogate_assess, surrogate_base, write_wav)
from sspesq.table import aggregate
from sspesq.tracegen import NetworkConfig, config_grid, generate_traces

QUIET = SurrogateParams(noise_sigma=0.0)


def every_kth_lost(n, k):
    bits = np.zeros(n, dtype=np.uint8)
    bits[::k] = 1
    return LossTrace(bits)


def test_surrogate_ceiling():
    assert surrogate_assess(LossTrace(np.zeros(400)), 1, QUIET) == 4.5
    assert surrogate_assess(LossTrace(np.zeros(400)), 0, QUIET) == 4.5


def test_surrogate_examples():
    trace = every_kth_lost(400, 10)  # 10 % isolated losses
    assert surrogate_assess(trace, 1, QUIET) == pytest.approx(1 + 3.5 * math.exp(-0.6), abs=1e-12)
    assert surrogate_assess(trace, 1, QUIET) == pytest.approx(2.9208, abs=1e-4)
    assert surrogate_assess(trace, 0, QUIET) == pytest.approx(2.2876, abs=1e-4)


def test_surrogate_uses_burst_size():
    bits = np.zeros(400, dtype=np.uint8)
    for start in range(0, 400, 20):
        bits[start:start + 2] = 1     # 10 % loss in bursts of 2
    expected = 1 + 3.5 * math.exp(-0.06 * 10 * (1 + 0.08))
    assert surrogate_assess(LossTrace(bits), 1, QUIET) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0, 100), st.floats(0.01, 50), st.floats(1, 6), st.integers(0, 1))
def test_surrogate_monotone(el, gap, em, plc):
    assert surrogate_base(el, em, plc) > surrogate_base(el + gap, em, plc)
    assert surrogate_base(el, em, 1) >= surrogate_base(el, em, 0)


def test_surrogate_noise_bounded_and_keyed():
    params = SurrogateParams(noise_sigma=2.0, seed=5)
    trace = every_kth_lost(400, 5)
    scores = [surrogate_assess(trace, 0, params, key=(k,)) for k in range(300)]
    assert all(1.0 <= s <= 4.5 for s in scores)
    assert len(set(scores)) > 50
    assert surrogate_assess(trace, 0, params, key=(7,)) == scores[7]


def test_batch_single_sample_noise_free():
    c = NetworkConfig(1, 10, 2)
    (rec,) = batch_assess([c], 1, SurrogateOracle(QUIET), seed=3, reps_per_trace=1)
    (trace,) = generate_traces(c, 1, 400, master_seed=3)
    assert rec.score == surrogate_assess(trace, 1, QUIET)
    assert (rec.trace_id, rec.rep_id, rec.config) == (0, 0, c)


def test_batch_counts_and_determinism():
    configs = config_grid(400)[::60]
    oracle = SurrogateOracle(SurrogateParams(seed=2))
    a = batch_assess(configs, 3, oracle, seed=1, reps_per_trace=4)
    assert len(a) == len(configs) * 3 * 4
    assert a == batch_assess(configs, 3, oracle, seed=1, reps_per_trace=4)
    assert a == batch_assess(configs, 3, oracle, seed=1, reps_per_trace=4, max_workers=3)
    # repetitions redraw noise
    per_trace = {}
    for r in a:
        per_trace.setdefault((r.config, r.trace_id), set()).add(r.score)
    assert any(len(v) > 1 for v in per_trace.values())


def test_batch_heavy_multiplier():
    configs = [NetworkConfig(0, 5, 1), NetworkConfig(0, 25, 1)]
    recs = batch_assess(configs, 2, SurrogateOracle(QUIET), seed=0, reps_per_trace=1,
                        heavy_multiplier=3, heavy_lr_pct=20)
    counts = {s.config.lr_pct: s.count for s in aggregate(recs)}
    assert counts == {5: 2, 25: 6}


# --------------------------------------------------------------------------
# external adapter, exercised against a stand-in executable

FAKE_PESQ = textwrap.dedent("""
    import shutil, sys, wave
    ref, deg, keep, mode = sys.argv[1:5]
    shutil.copy(ref, keep + "/ref.wav")
    shutil.copy(deg, keep + "/deg.wav")
    with wave.open(deg) as w:
        assert w.getframerate() == 8000 and w.getnchannels() == 1 and w.getsampwidth() == 2
    if mode == "fail":
        print("cannot open license file")
        sys.exit(3)
    if mode == "garbage":
        print("done")
    elif mode == "low":
        print("P.862 Prediction (Raw MOS, MOS-LQO):  = 0.412\\t0.900")
    else:
        print("some banner")
        print("P.862 Prediction (Raw MOS, MOS-LQO):  = 3.512\\t3.250")
""")


@pytest.fixture
def fake_tool(tmp_path):
    script = tmp_path / "fake_pesq.py"
    script.write_text(FAKE_PESQ)
    keep = tmp_path / "keep"
    keep.mkdir()

    def adapter(mode="ok", **kw):
        cmd = f"{sys.executable} {script} {{ref}} {{deg}} {keep} {mode}"
        return ExternalPesqAdapterConfig(command=cmd, **kw)
    return adapter, keep


def speech(frames=4, frame=160, seed=0):
    return np.random.default_rng(seed).integers(-20000, 20000, frames * frame).astype(np.int16)


def test_adapter_lossless_identity(fake_tool):
    adapter, keep = fake_tool
    ref = speech()
    score = external_assess(ref, LossTrace(np.zeros(4)), 0, adapter())
    assert score == 3.25
    assert (keep / "ref.wav").read_bytes() == (keep / "deg.wav").read_bytes()


def test_adapter_repeats_previous_frame(fake_tool):
    adapter, keep = fake_tool
    ref = speech()
    external_assess(ref, LossTrace(np.array([0, 1, 0, 0])), 1, adapter())
    deg = read_wav(keep / "deg.wav")
    assert np.array_equal(deg[160:320], ref[0:160])
    assert np.array_equal(deg[320:], ref[320:])


def test_degrade_without_concealment_is_silence():
    ref = speech(5)
    deg = degrade_audio(ref, np.array([1, 0, 1, 1, 0]), plc=0)
    assert not deg[:160].any() and not deg[320:640].any()
    assert np.array_equal(deg[160:320], ref[160:320])
    deg = degrade_audio(ref, np.array([1, 0, 1, 1, 0]), plc=1)
    assert not deg[:160].any()                           # nothing received yet
    assert np.array_equal(deg[320:480], ref[160:320])
    assert np.array_equal(deg[480:640], ref[160:320])


def test_adapter_errors(fake_tool):
    adapter, _ = fake_tool
    ref = speech()
    with pytest.raises(ExternalProcessError) as info:
        external_assess(ref, LossTrace(np.zeros(4)), 0, adapter("fail"))
    assert info.value.returncode == 3
    assert "license" in info.value.output
    with pytest.raises(OutputParseError):
        external_assess(ref, LossTrace(np.zeros(4)), 0, adapter("garbage"))
    with pytest.raises(AudioFormatError):
        external_assess(ref.astype(np.float32), LossTrace(np.zeros(4)), 0, adapter())
    with pytest.raises(AudioFormatError):
        external_assess(ref, LossTrace(np.zeros(3)), 0, adapter())
    with pytest.raises(ExternalProcessError):
        bad = ExternalPesqAdapterConfig(command="/nonexistent/pesq {ref} {deg}")
        external_assess(ref, LossTrace(np.zeros(4)), 0, bad)


def test_adapter_clamps_and_pattern(fake_tool):
    adapter, _ = fake_tool
    ref = speech()
    assert external_assess(ref, LossTrace(np.zeros(4)), 0, adapter("low")) == 1.0
    raw = adapter(score_pattern=r"= ([\d.]+)")
    assert external_assess(ref, LossTrace(np.zeros(4)), 0, raw) == 3.512


def test_external_oracle_cycles_references(fake_tool, tmp_path):
    adapter, keep = fake_tool
    refs = [speech(seed=1), speech(seed=2)]
    oracle = ExternalPesqOracle(refs, adapter())
    oracle.assess(LossTrace(np.zeros(4)), NetworkConfig(0, 5, 1), 0, 3)
    assert np.array_equal(read_wav(keep / "ref.wav"), refs[1])


def test_command_template_validation():
    with pytest.raises(ValueError):
        ExternalPesqAdapterConfig(command="pesq {ref}")
    with pytest.raises(ValueError):
        ExternalPesqAdapterConfig(command="pesq {ref} {deg} {deg}")


def test_parse_score_rules():
    assert parse_score("x\nP.862 = 2.1 3.4\n\n") == 3.4
    assert parse_score("MOS 1e0") == 1.0
    with pytest.raises(OutputParseError):
        parse_score("")


def test_wav_round_trip_and_rate_check(tmp_path):
    ref = speech()
    write_wav(tmp_path / "a.wav", ref)
    assert np.array_equal(read_wav(tmp_path / "a.wav"), ref)
    write_wav(tmp_path / "b.wav", ref, sample_rate=16000)
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "b.wav")
