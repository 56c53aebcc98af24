import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csiloc.channel import (
    ChannelParams,
    Scene,
    amplitude_snapshot,
    crs_subcarrier_indices,
    indoor_scene,
    mean_amplitude,
    mean_fingerprint,
    outdoor_scene,
    pathloss_gain,
    specular_response,
    synth_csi,
    synth_stream,
    tap_powers,
    to_polar,
)
from csiloc.errors import DomainError, ParameterError

FLAT = dict(shadowing_sigma_db=0.0, rician_k=math.inf, noise_sigma=0.0, specular_multipath=0.0)


def open_scene(n_rb=25, n_tx=1):
    return Scene((0, 0, 100, 100), (0, 0), [(10, 10), (20, 20)], [(50, 50)], n_rb=n_rb, n_tx=n_tx)


class TestCrsLayout:
    def test_single_rb(self):
        lay = crs_subcarrier_indices(1, 0, 0)
        assert lay.subcarrier_indices == (0, 6)
        assert lay.n_c == 2

    def test_25_rb_matches_sln_input_width(self):
        lay = crs_subcarrier_indices(25, 0, 0)
        assert lay.subcarrier_indices == tuple(k for k in range(300) if k % 6 == 0)
        assert lay.n_c == 50

    def test_cell_shift(self):
        assert crs_subcarrier_indices(1, 0, 3).subcarrier_indices == (3, 9)

    def test_port_one_is_offset_by_three(self):
        assert crs_subcarrier_indices(1, 1, 0).subcarrier_indices == (3, 9)
        assert crs_subcarrier_indices(1, 1, 4).subcarrier_indices == (1, 7)

    @pytest.mark.parametrize("args", [(1, 4, 0), (1, -1, 0), (1, 0, 6), (1, 0, -1), (0, 0, 0)])
    def test_invalid_parameters(self, args):
        with pytest.raises(ParameterError):
            crs_subcarrier_indices(*args)

    @given(st.integers(1, 110), st.integers(0, 3), st.integers(0, 5))
    def test_comb_invariants(self, n_rb, port, shift):
        idx = np.array(crs_subcarrier_indices(n_rb, port, shift).subcarrier_indices)
        assert len(idx) == 2 * n_rb
        assert (np.diff(idx) == 6).all()
        assert idx.max() < 12 * n_rb
        assert idx.min() >= 0


class TestScene:
    def test_indoor_preset_geometry(self):
        s = indoor_scene()
        assert s.m == 15
        xs, ys = np.unique(s.rp_locations[:, 0]), np.unique(s.rp_locations[:, 1])
        np.testing.assert_allclose(np.diff(xs), 1.2)
        np.testing.assert_allclose(np.diff(ys), 1.2)
        assert s.area_bounds == (0.0, 0.0, 3.6, 6.0)

    def test_outdoor_preset_spacing(self):
        s = outdoor_scene()
        assert s.m == 105
        steps = np.hypot(*np.diff(s.rp_locations, axis=0).T)
        # corners of the route shorten the straight-line step slightly
        assert np.median(steps) == pytest.approx(5.0)
        assert (steps <= 5.0 + 1e-9).all()
        assert s.contains(s.tp_locations).all()

    def test_duplicate_rps_rejected(self):
        with pytest.raises(ParameterError):
            Scene((0, 0, 10, 10), (0, 0), [(1, 1), (1, 1)], [])

    def test_point_outside_area_rejected(self):
        with pytest.raises(ParameterError):
            Scene((0, 0, 10, 10), (0, 0), [(1, 1), (11, 1)], [])

    @pytest.mark.parametrize("kw", [{"n_tx": 3}, {"n_rb": 0}])
    def test_bad_radio_config(self, kw):
        with pytest.raises(ParameterError):
            Scene((0, 0, 10, 10), (0, 0), [(1, 1), (2, 1)], [], **kw)

    def test_config_round_trip_preserves_digest(self):
        s = indoor_scene()
        again = Scene.from_config(s.to_config())
        assert again.digest() == s.digest()
        np.testing.assert_array_equal(again.rp_locations, s.rp_locations)


class TestSynthCsi:
    def test_flat_channel_is_pure_pathloss(self):
        scene = open_scene()
        params = ChannelParams(**FLAT)
        loc = (40.0, 30.0)
        csi = synth_stream(scene, params, loc, range(4))
        expected = pathloss_gain(50.0, params)
        np.testing.assert_allclose(np.abs(csi), expected, rtol=1e-12)
        # slots differ only by the common phase jitter
        np.testing.assert_allclose(np.abs(csi), np.abs(csi[:1]).repeat(4, axis=0), rtol=1e-14)

    def test_determinism(self):
        scene = indoor_scene()
        params = ChannelParams(rng_seed=7)
        a = synth_csi(scene, params, (1.0, 2.0), 17)
        b = synth_csi(scene, params, (1.0, 2.0), 17)
        assert a.tobytes() == b.tobytes()

    def test_single_slot_matches_stream(self):
        scene = indoor_scene()
        params = ChannelParams(rng_seed=3, coherence_slots=4)
        stream = synth_stream(scene, params, (2.0, 2.0), [9, 0, 5])
        for i, slot in enumerate([9, 0, 5]):
            assert synth_csi(scene, params, (2.0, 2.0), slot).tobytes() == stream[i].tobytes()

    def test_seed_changes_output(self):
        scene = indoor_scene()
        a = synth_csi(scene, ChannelParams(rng_seed=1), (1.0, 2.0), 0)
        b = synth_csi(scene, ChannelParams(rng_seed=2), (1.0, 2.0), 0)
        assert not np.array_equal(a, b)

    def test_mean_power_monte_carlo(self):
        # Flat specular part, unit-power fading: E|h|^2 = pathloss^2.
        scene = open_scene(n_rb=6)
        params = ChannelParams(shadowing_sigma_db=0.0, rician_k=2.0, noise_sigma=0.0,
                               specular_multipath=0.0, coherence_slots=1)
        loc = (30.0, 40.0)
        power = (np.abs(synth_stream(scene, params, loc, range(12000))) ** 2).mean(axis=0)
        ref = pathloss_gain(50.0, params) ** 2
        np.testing.assert_allclose(power / ref, 1.0, rtol=0.03)

    def test_mean_power_with_multipath(self):
        # With a frequency-selective specular part the mean power per subcarrier
        # is A^2 (K |S|^2 + 1) / (K + 1).
        scene = open_scene(n_rb=6)
        k = 3.0
        params = ChannelParams(shadowing_sigma_db=2.0, rician_k=k, noise_sigma=0.0,
                               specular_multipath=0.7, coherence_slots=1, rng_seed=5)
        loc = (30.0, 40.0)
        power = (np.abs(synth_stream(scene, params, loc, range(12000))) ** 2).mean(axis=0)
        s = np.abs(specular_response(scene, params, loc)) ** 2
        expected = mean_amplitude(scene, params, loc) ** 2 * (k * s + 1) / (k + 1)
        np.testing.assert_allclose(power / expected, 1.0, rtol=0.05)

    def test_fading_constant_within_coherence_block(self):
        scene = indoor_scene()
        params = ChannelParams(noise_sigma=0.0, coherence_slots=4)
        amp = np.abs(synth_stream(scene, params, (1.0, 1.0), range(8)))
        np.testing.assert_allclose(amp[0], amp[3], rtol=1e-12)
        assert not np.allclose(amp[3], amp[4])

    def test_temporal_variation(self):
        scene = indoor_scene()
        params = ChannelParams(coherence_slots=1)
        amp = np.abs(synth_stream(scene, params, (1.0, 1.0), range(4)))
        assert (amp.var(axis=0) > 0).all()

    def test_outside_area_is_domain_error(self):
        with pytest.raises(DomainError):
            synth_csi(indoor_scene(), ChannelParams(), (5.0, 1.0), 0)

    def test_shadowing_is_shared_by_nearby_points(self):
        # Same 0.1 m cell -> same shadowing value.
        scene = indoor_scene()
        params = ChannelParams(shadowing_sigma_db=6.0)
        flat = ChannelParams(shadowing_sigma_db=0.0)
        shadow = [mean_amplitude(scene, params, p) / mean_amplitude(scene, flat, p)
                  for p in [(1.01, 2.02), (1.03, 1.98)]]
        assert shadow[0] == pytest.approx(shadow[1], rel=1e-12)
        assert shadow[0] != pytest.approx(1.0)

    @given(st.sampled_from([1, 2, 4]), st.integers(1, 30))
    @settings(max_examples=20, deadline=None)
    def test_shape(self, n_tx, n_rb):
        csi = synth_csi(open_scene(n_rb, n_tx), ChannelParams(), (5.0, 5.0), 3)
        assert csi.shape == (n_tx, 2 * n_rb)

    @given(st.floats(0.0, 60.0), st.floats(0.5, 30.0))
    @settings(max_examples=50, deadline=None)
    def test_monotone_pathloss(self, r, dr):
        scene = open_scene()
        params = ChannelParams(**FLAT)
        near = np.abs(synth_csi(scene, params, (1.0 + r / math.sqrt(2), 1.0 + r / math.sqrt(2)), 0))
        far_r = r + dr
        far = np.abs(synth_csi(scene, params, (1.0 + far_r / math.sqrt(2), 1.0 + far_r / math.sqrt(2)), 0))
        # distance below 1 m is floored; start the walk at sqrt(2) m from the BS
        assert (far < near).all()

    @given(st.integers(0, 10_000), st.floats(0.0, 0.5))
    @settings(max_examples=30, deadline=None)
    def test_snapshot_nonnegative(self, slot, noise):
        csi = synth_csi(indoor_scene(), ChannelParams(noise_sigma=noise), (2.0, 3.0), slot)
        assert (amplitude_snapshot(csi) >= 0).all()

    def test_tap_powers_unit_sum(self):
        p = tap_powers()
        assert len(p) == 3
        assert p.sum() == pytest.approx(1.0)
        assert (np.diff(p) < 0).all()


class TestSnapshots:
    def test_magnitude_of_polar_form(self):
        csi = np.array([[3 * np.exp(1j * np.pi / 4)]])
        assert amplitude_snapshot(csi)[0] == pytest.approx(3.0)

    def test_zero_matrix(self):
        assert (amplitude_snapshot(np.zeros((1, 50), complex)) == 0).all()

    def test_against_per_entry_magnitude(self):
        rng = np.random.default_rng(0)
        csi = rng.normal(size=(1, 50)) + 1j * rng.normal(size=(1, 50))
        expected = [math.hypot(z.real, z.imag) for z in csi[0]]
        np.testing.assert_allclose(amplitude_snapshot(csi), expected, rtol=1e-15)

    def test_row_major_flatten(self):
        csi = np.arange(6).reshape(2, 3) * (1 + 0j)
        np.testing.assert_array_equal(amplitude_snapshot(csi), [0, 1, 2, 3, 4, 5])

    def test_polar_reconstruction(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=20) + 1j * rng.normal(size=20)
        amp, phase = to_polar(z)
        assert ((phase >= -np.pi) & (phase < np.pi)).all()
        np.testing.assert_allclose(amp * np.exp(1j * phase), z)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            amplitude_snapshot(np.zeros((0, 0)))


class TestMeanFingerprint:
    def test_single_snapshot(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(mean_fingerprint([v]), v)

    def test_symmetric_pair(self):
        a = np.array([0.3, 1.7, 4.0])
        c = np.array([1.0, 1.0, 2.5])
        np.testing.assert_allclose(mean_fingerprint([a, 2 * c - a]), c)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            mean_fingerprint([])

    def test_law_of_large_numbers(self):
        # Unit pathloss gain at 1 m, flat channel, 10% amplitude noise.
        scene = Scene((0, 0, 10, 10), (0, 0), [(0.5, 0.5), (2, 2)], [])
        base = dict(FLAT, pathloss_ref_db=0.0)
        loc = (0.5, 0.5)
        clean = amplitude_snapshot(synth_csi(scene, ChannelParams(**base), loc, 0))
        noisy = ChannelParams(**{**base, "noise_sigma": 0.1})
        snaps = [amplitude_snapshot(c) for c in synth_stream(scene, noisy, loc, range(1000))]
        assert np.abs(mean_fingerprint(snaps) - clean).max() < 0.02
