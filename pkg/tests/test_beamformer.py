import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soisep.array_sim import linear_array, polygon_array, simulate_mixture
from soisep.beamformer import (
    MultichannelSpectra,
    StreamingBeamformer,
    apply_masks,
    concat_outputs,
    make_masks,
    mean_pairwise_phase_diff,
    phase_align,
    process_stream,
)
from soisep.corpus import bandlimited_noise, synthetic_corpus


def test_phase_diff_three_mic_oracle():
    X = np.exp(1j * np.array([0.0, np.pi / 3, 2 * np.pi / 3]))[:, None]
    assert abs(mean_pairwise_phase_diff(X)[0] - 4 * np.pi / 9) < 1e-12


def test_phase_diff_is_wrapped():
    # 350 degrees apart is 10 degrees apart
    X = np.exp(1j * np.deg2rad([0.0, 350.0]))[:, None]
    assert np.isclose(mean_pairwise_phase_diff(X)[0], np.deg2rad(10.0))


@settings(max_examples=50, deadline=None)
@given(phases=st.lists(st.floats(-10, 10), min_size=2, max_size=6), shift=st.floats(-10, 10))
def test_phase_diff_invariant_to_common_phase(phases, shift):
    X = np.exp(1j * np.array(phases))[:, None]
    a = mean_pairwise_phase_diff(X)
    b = mean_pairwise_phase_diff(X * np.exp(1j * shift))
    assert 0.0 <= a[0] <= np.pi + 1e-12
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_phase_diff_needs_two_mics():
    with pytest.raises(ValueError):
        mean_pairwise_phase_diff(np.ones((1, 5)))


def test_alignment_zeroes_phase_diff_at_steered_doa():
    rng = np.random.default_rng(0)
    g = polygon_array("hexagon")
    x = rng.standard_normal(1024)
    mics = simulate_mixture([(x, 30.0)], g)
    spec = MultichannelSpectra(np.fft.rfft(mics, axis=-1), 1024)
    diff = mean_pairwise_phase_diff(phase_align(spec, 30.0, g))
    assert np.max(diff[1:-1]) < 1e-8


def test_mask_threshold_inclusive_and_complementary():
    d = np.array([0.0, 1.0, np.pi / 3, 1.1, np.pi])
    m = make_masks(d, np.pi / 3)
    np.testing.assert_array_equal(m.soi, [True, True, True, False, False])
    np.testing.assert_array_equal(m.int, ~m.soi)
    edges = make_masks(np.zeros(6), exclude_edges=True)
    assert not edges.soi[0] and not edges.soi[-1] and edges.soi[1:-1].all()


@pytest.mark.parametrize("phi", [0.0, -1.0, 4.0])
def test_bad_phi_max(phi):
    with pytest.raises(ValueError):
        make_masks(np.zeros(3), phi)


def test_apply_masks_partitions_reference():
    X = np.random.default_rng(1).standard_normal((3, 9)) + 0j
    m = make_masks(np.random.default_rng(2).uniform(0, np.pi, 9))
    s, i = apply_masks(X, m)
    np.testing.assert_allclose(s + i, X[0])


def _scene(doas, g, n=32768, seed=0):
    corpus = synthetic_corpus(len(doas), n, seed=seed)
    return corpus, simulate_mixture(list(zip(corpus, doas)), g)


def test_stream_partition_and_reference():
    g = linear_array(3)
    _, mics = _scene([0.0, 45.0], g)
    outs = process_stream(mics, 0.0, g, buffer_len=8192)
    assert len(outs) == 4
    z_soi, z_int, ref = concat_outputs(outs)
    np.testing.assert_array_equal(ref, mics[0])
    err = np.linalg.norm(z_soi + z_int - ref) / np.linalg.norm(ref)
    assert err < 1e-12


@settings(max_examples=10, deadline=None)
@given(cuts=st.lists(st.integers(1, 5000), min_size=1, max_size=8))
def test_stream_is_chunking_invariant(cuts):
    g = linear_array(2)
    mics = np.random.default_rng(3).standard_normal((2, 20480))
    whole = concat_outputs(process_stream(mics, -45.0, g, buffer_len=4096))
    bf = StreamingBeamformer(-45.0, g, buffer_len=4096)
    outs, pos = [], 0
    for c in cuts:
        outs += bf.push(mics[:, pos:pos + c])
        pos += c
    outs += bf.push(mics[:, pos:]) + bf.flush()
    for a, b in zip(whole, concat_outputs(outs)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_incomplete_buffer_dropped():
    g = linear_array(2)
    outs = process_stream(np.zeros((2, 5000)), 0.0, g, buffer_len=4096)
    assert len(outs) == 1 and outs[0].z_soi.size == 4096


@pytest.mark.parametrize("kwargs", [dict(doa=95.0), dict(buffer_len=1000), dict(frame_len=1023)])
def test_stream_validation(kwargs):
    args = dict(doa=0.0, geometry=linear_array(2), frame_len=1024, buffer_len=16384) | kwargs
    with pytest.raises(ValueError):
        StreamingBeamformer(**args)


def test_stream_channel_mismatch():
    with pytest.raises(ValueError):
        StreamingBeamformer(0.0, linear_array(2)).push(np.zeros((3, 100)))


def _energy_ratio_db(mics, doa, g, phi=np.pi / 3):
    z_soi, z_int, _ = concat_outputs(process_stream(mics, doa, g, phi_max=phi))
    return 10 * np.log10(np.sum(z_soi ** 2) / np.sum(z_int ** 2))


@pytest.mark.parametrize("doa", [-90.0, -45.0, 0.0, 45.0, 90.0])
def test_steered_source_passes(doa):
    g = linear_array(2)
    _, mics = _scene([doa], g)
    assert _energy_ratio_db(mics, doa, g) >= 20.0


def test_off_target_source_is_rejected():
    # between 400 and 1200 Hz the wrapped endfire-to-endfire phase gap stays above 60 degrees
    g = linear_array(2)
    x = bandlimited_noise(32768, 400.0, 1200.0, 16000, np.random.default_rng(4))
    mics = simulate_mixture([(x, 90.0)], g)
    assert _energy_ratio_db(mics, -90.0, g) < -20.0


def test_soi_energy_monotone_in_phi_max():
    g = linear_array(2)
    _, mics = _scene([0.0, 45.0], g, seed=5)
    phis = np.deg2rad([15, 30, 60, 90, 180])
    energies = []
    for phi in phis:
        z_soi, _, _ = concat_outputs(process_stream(mics, 0.0, g, phi_max=phi))
        energies.append(np.sum(z_soi ** 2))
    assert np.all(np.diff(energies) >= -1e-9)
