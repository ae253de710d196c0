"""Simulator contracts: determinism, identity chains, SNR calibration, splits."""

import numpy as np
import pytest

from dacauth.signals import (
    ChannelConfig,
    DeviceProfile,
    IqTrace,
    apply_channel,
    apply_device,
    build_dataset,
    derive_seed,
    generate_baseband,
    load_trace,
    read_manifest,
    sample_device_profile,
    save_trace,
    trace_to_windows,
    unit_normalize,
    write_manifest,
)


def measured_snr_db(clean: np.ndarray, received: np.ndarray) -> float:
    noise = received - clean
    return 10.0 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))


class TestBaseband:
    def test_deterministic(self):
        a = generate_baseband(7, 1024)
        b = generate_baseband(7, 1024)
        assert np.array_equal(a.samples, b.samples)

    def test_unit_power(self):
        for payload in (0, 7, 12345):
            t = generate_baseband(payload, 4096)
            assert np.mean(np.abs(t.samples) ** 2) == pytest.approx(1.0, abs=1e-9)

    def test_payloads_differ(self):
        a = generate_baseband(7, 1024)
        b = generate_baseband(8, 1024)
        assert np.any(a.samples != b.samples)

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            generate_baseband(1, 63)


class TestDeviceProfile:
    def test_deterministic(self):
        assert sample_device_profile(1, 0.5) == sample_device_profile(1, 0.5)

    def test_small_spread_is_near_nominal(self):
        p = sample_device_profile(3, 1e-9)
        assert p.iq_gain_imbalance == pytest.approx(1.0, abs=1e-6)
        assert abs(p.iq_phase_skew) < 1e-6
        assert abs(p.cfo_ppm) < 1e-4

    def test_ranges_hold_over_many_draws(self):
        for seed in range(1000):
            p = sample_device_profile(seed, 0.5)
            assert 0.5 < p.iq_gain_imbalance < 2.0
            assert abs(p.iq_phase_skew) < 0.2
            assert abs(p.dc_offset_i) < 0.1 and abs(p.dc_offset_q) < 0.1
            assert abs(p.cfo_ppm) < 100.0
            assert p.phase_noise_std >= 0.0
            assert abs(p.pa_coeff_3rd) < 0.3

    def test_rejects_bad_spread(self):
        for spread in (0.0, -1.0, 1.5):
            with pytest.raises(ValueError):
                sample_device_profile(1, spread)

    def test_invariants_enforced_on_construction(self):
        with pytest.raises(ValueError):
            DeviceProfile(device_id=0, iq_gain_imbalance=2.5)
        with pytest.raises(ValueError):
            DeviceProfile(device_id=0, dc_offset_i=0.2)


class TestApplyDevice:
    def test_nominal_profile_is_identity(self):
        t = generate_baseband(3, 2048)
        out = apply_device(t, DeviceProfile(device_id=0))
        assert np.max(np.abs(out.samples - t.samples)) < 1e-9

    def test_dc_offset_shifts_mean_before_normalization(self):
        t = generate_baseband(3, 4096)
        p = DeviceProfile(device_id=0, dc_offset_i=0.05)
        out = apply_device(t, p, normalize=False)
        shift = np.mean(out.samples.real) - np.mean(t.samples.real)
        assert shift == pytest.approx(0.05, abs=1e-12)

    def test_distinct_profiles_distinct_outputs(self):
        t = generate_baseband(3, 1024)
        rng_pairs = [(2 * k, 2 * k + 1) for k in range(50)]
        for sa, sb in rng_pairs:
            pa = sample_device_profile(sa, 0.1)
            pb = sample_device_profile(sb, 0.1)
            a = apply_device(t, pa)
            b = apply_device(t, pb)
            assert np.any(a.samples != b.samples)

    def test_output_unit_power(self):
        t = generate_baseband(4, 2048)
        p = sample_device_profile(9, 0.8)
        out = apply_device(t, p)
        assert np.mean(np.abs(out.samples) ** 2) == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        t = generate_baseband(5, 1024)
        p = sample_device_profile(11, 0.5)
        assert np.array_equal(apply_device(t, p).samples, apply_device(t, p).samples)


class TestApplyChannel:
    def test_noiseless_identity(self):
        t = generate_baseband(1, 1024)
        out = apply_channel(t, ChannelConfig(snr_db=np.inf), seed=4)
        assert np.array_equal(out.samples, t.samples)

    def test_snr_calibration(self):
        t = generate_baseband(1, 100_000)
        for snr in (-15.0, -5.0, 0.0, 10.0):
            out = apply_channel(t, ChannelConfig(snr_db=snr), seed=42)
            assert measured_snr_db(t.samples, out.samples) == pytest.approx(snr, abs=0.1)

    def test_deterministic(self):
        t = generate_baseband(1, 4096)
        cfg = ChannelConfig(snr_db=0.0, rician_k_db=6.0, doppler_norm=0.002)
        a = apply_channel(t, cfg, seed=9)
        b = apply_channel(t, cfg, seed=9)
        assert np.array_equal(a.samples, b.samples)

    def test_fading_preserves_mean_power_roughly(self):
        t = generate_baseband(1, 65536)
        out = apply_channel(t, ChannelConfig(snr_db=np.inf, rician_k_db=10.0,
                                             doppler_norm=0.005), seed=3)
        assert np.mean(np.abs(out.samples) ** 2) == pytest.approx(1.0, rel=0.5)

    def test_identity_chain_end_to_end(self):
        base = generate_baseband(6, 4096)
        clean = apply_device(base, DeviceProfile(device_id=0))
        out = apply_channel(clean, ChannelConfig(snr_db=np.inf), seed=1)
        assert np.max(np.abs(out.samples - base.samples)) < 1e-9


class TestWindowing:
    def test_exact_multiple(self):
        s = np.arange(8) + 1j * np.arange(8)
        w = trace_to_windows(s, 4)
        assert w.shape == (2, 2, 4)
        assert np.array_equal(w[0, 0], np.arange(4, dtype=np.float32))
        assert np.array_equal(w[1, 1], np.arange(4, 8, dtype=np.float32))

    def test_too_short_raises(self):
        from dacauth.errors import InsufficientSamplesError
        with pytest.raises(InsufficientSamplesError):
            trace_to_windows(np.zeros(10, complex), 64)


@pytest.fixture(scope="module")
def small():
    return build_dataset(n_devices=3, intruder_id=2, snr_list=[0.0, -5.0],
                         frames_per_cell=10, window_len=128, seed=17,
                         windows_per_frame=4)


class TestBuildDataset:

    def test_intruder_excluded_from_train_and_val(self, small):
        assert not np.any(small.train.device_id == 2)
        assert not np.any(small.validation.device_id == 2)
        assert np.any(small.test.device_id == 2)

    def test_split_fractions(self, small):
        authorized = 2 * 2 * 10 * 4  # devices x snrs x frames x windows
        assert len(small.train) == round(0.90 * authorized)
        assert len(small.validation) == round(0.05 * authorized)
        auth_test = len(small.test) - np.count_nonzero(small.test.device_id == 2)
        assert auth_test == authorized - len(small.train) - len(small.validation)

    def test_snr_cells_present(self, small):
        for snr in (0.0, -5.0):
            assert np.any(small.test.snr_db == snr)

    def test_deterministic(self):
        kwargs = dict(n_devices=2, intruder_id=1, snr_list=[0.0], frames_per_cell=4,
                      window_len=128, seed=23, windows_per_frame=2)
        a = build_dataset(**kwargs)
        b = build_dataset(**kwargs)
        assert np.array_equal(a.train.x, b.train.x)
        assert np.array_equal(a.test.x, b.test.x)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            build_dataset(1, 0, [0.0], 1, 128, 0)
        with pytest.raises(ValueError):
            build_dataset(3, 5, [0.0], 1, 128, 0)
        with pytest.raises(ValueError):
            build_dataset(3, 0, [], 1, 128, 0)


class TestTraceIO:
    def test_round_trip(self, tmp_path):
        t = generate_baseband(9, 256)
        meta = {"device_id": 1, "snr_db": 0.0, "payload_id": 9,
                "sample_rate": 4e6, "window_len": 128, "seed": 5}
        p = tmp_path / "trace.iq"
        save_trace(p, t.samples, meta)
        samples, meta2 = load_trace(p)
        assert meta2 == meta
        assert np.allclose(samples, t.samples, atol=1e-7)

    def test_manifest_round_trip(self, tmp_path):
        entries = [{"path": "a.iq", "split": "train", "device_id": 0}]
        write_manifest(tmp_path / "manifest.json", entries)
        assert read_manifest(tmp_path / "manifest.json") == entries


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert derive_seed(1, "a") != derive_seed(2, "a")


def test_unit_normalize_rejects_zero():
    with pytest.raises(ValueError):
        unit_normalize(np.zeros(4, complex))
