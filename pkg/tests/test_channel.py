import math
import warnings

import numpy as np
import pytest

from thzcabin.channel import (
    LatticeError,
    Mpc,
    MpcSet,
    cfr_to_cir,
    extract_mpcs,
    load_cfr_csv,
    load_mpc_csv,
    omni_pdp,
    padp,
    reflection_loss_of_path,
    save_cfr_csv,
    save_mpcset_csv,
    save_padp_csv,
    save_paths_csv,
    synthesize_cfr,
)
from thzcabin.raytrace import TraceConfig, trace
from thzcabin.rf import SPEED_OF_LIGHT, fspl_db
from thzcabin.scene import Box, Facet, Scene

BAND = (290e9, 310e9, 2001)


def grid_of(paths, n_freq=2001, window="rect"):
    return cfr_to_cir(synthesize_cfr(paths, 290e9, 310e9, n_freq), window=window)


class TestSynthesizeCfr:
    def test_zero_delay_path_is_flat_one(self):
        cfr = synthesize_cfr([Mpc(0.0, 0.0, 0.0, 0.0)], *BAND)
        zi, ai = 9, 0  # zenith 0 bin, azimuth 0 bin
        assert np.allclose(cfr.values[:, zi, ai], 1.0)

    def test_delay_sets_phase_slope(self):
        tau = 5e-9
        cfr = synthesize_cfr([Mpc(tau, 0.0, 0.0, 0.0)], *BAND)
        col = cfr.values[:, 9, 0]
        assert np.allclose(np.abs(col), 1.0)
        dphi = np.angle(col[1:] / col[:-1])
        df = cfr.freq_hz[1] - cfr.freq_hz[0]
        assert np.allclose(dphi, -2.0 * np.pi * df * tau, atol=1e-9)

    def test_two_path_null_in_band(self):
        # equal paths 0 and 0.025 ns apart interfere destructively at 300 GHz
        paths = [Mpc(0.0, 0.0, 0.0, -10.0), Mpc(0.025e-9, 0.0, 0.0, -10.0)]
        cfr = synthesize_cfr(paths, *BAND)
        mag = np.abs(cfr.values[:, 9, 0])
        null_at = cfr.freq_hz[np.argmin(mag)]
        assert null_at == pytest.approx(300e9, abs=2e7)
        assert mag.min() < 1e-10

    def test_angle_binning(self):
        cfr = synthesize_cfr([Mpc(1e-9, 33.0, 111.0, -20.0)], *BAND)
        zi = np.argmin(np.abs(cfr.zenith_deg - 33.0))
        ai = np.argmin(np.abs(cfr.azimuth_deg - 111.0))
        assert np.abs(cfr.values[:, zi, ai]).max() > 0.0
        assert np.count_nonzero(np.abs(cfr.values).sum(axis=0)) == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            synthesize_cfr([], 300e9, 300e9, 101)
        with pytest.raises(ValueError):
            synthesize_cfr([], 290e9, 310e9, 1)


class TestCfrToCir:
    def test_on_bin_impulse_position(self):
        step = 1.0 / (2001 * 1e7)
        grid = grid_of([Mpc(80 * step, 0.0, 0.0, -80.0)])
        assert grid.delay_resolution_s == pytest.approx(step)
        assert int(np.argmax(omni_pdp(grid))) == 80
        assert 10 * math.log10(omni_pdp(grid).max()) == pytest.approx(-80.0, abs=1e-9)

    def test_delay_resolution_near_inverse_bandwidth(self):
        grid = grid_of([Mpc(1e-9, 0.0, 0.0, -80.0)])
        assert grid.delay_resolution_s == pytest.approx(0.05e-9, rel=1e-3)

    def test_flat_cfr_is_impulse_at_zero(self):
        grid = grid_of([Mpc(0.0, 0.0, 0.0, 0.0)])
        pdp = omni_pdp(grid)
        assert int(np.argmax(pdp)) == 0
        assert pdp[1:].max() < 1e-20

    def test_fft_round_trip(self):
        cfr = synthesize_cfr(
            [Mpc(3.3e-9, 10.0, 60.0, -75.0), Mpc(8.1e-9, -20.0, 200.0, -90.0)], *BAND
        )
        grid = cfr_to_cir(cfr)
        back = np.fft.fft(grid.cir, axis=0)
        assert np.allclose(back, cfr.values, rtol=1e-9, atol=1e-15)

    def test_parseval_energy_conservation(self):
        cfr = synthesize_cfr(
            [Mpc(2.2e-9, 0.0, 50.0, -70.0), Mpc(6.02e-9, 30.0, 50.0, -81.0)], *BAND
        )
        grid = cfr_to_cir(cfr)
        cir_energy = grid.power.sum(axis=0)
        cfr_energy = (np.abs(cfr.values) ** 2).mean(axis=0)
        assert np.allclose(cir_energy, cfr_energy, rtol=1e-9)


class TestPadp:
    def test_single_cell(self):
        grid = grid_of([Mpc(4e-9, 20.0, 130.0, -80.0)])
        mat = padp(grid)
        assert mat.shape == (2001, 36)
        zi = np.argmin(np.abs(grid.zenith_deg - 20.0))
        assert mat.max() == pytest.approx(grid.power[:, zi, :].max())

    def test_zenith_sum(self):
        grid = grid_of([Mpc(4e-9, 20.0, 130.0, -80.0)])
        p = grid.power.copy()
        two = p + p[:, ::-1, :]  # mirror-stack along zenith, same sum
        assert np.allclose(two.sum(axis=1), 2.0 * padp(grid))

    def test_total_energy_preserved(self):
        grid = grid_of([Mpc(4e-9, 20.0, 130.0, -80.0), Mpc(9e-9, -40.0, 10.0, -85.0)])
        assert padp(grid).sum() == pytest.approx(grid.power.sum())

    def test_zenith_permutation_invariance(self):
        grid = grid_of([Mpc(4e-9, 20.0, 130.0, -80.0), Mpc(9e-9, -40.0, 130.0, -85.0)])
        perm = np.random.default_rng(0).permutation(grid.zenith_deg.size)
        assert np.allclose(padp(grid), grid.power[:, perm, :].sum(axis=1))


class TestExtractMpcs:
    def test_two_planted_paths(self):
        planted = [Mpc(4.0e-9, 0.0, 60.0, -80.0), Mpc(7.5e-9, 0.0, 290.0, -94.0)]
        got = extract_mpcs(grid_of(planted), noise_floor_db=-110.0)
        assert len(got) == 2
        for m, p in zip(got, planted):
            assert abs(m.tau - p.tau) <= 0.05e-9
            assert abs(m.power_db - p.power_db) <= 0.5
            assert m.azimuth_deg == p.azimuth_deg

    def test_all_noise_grid_empty(self):
        rng = np.random.default_rng(7)
        noise = [
            Mpc(t, 0.0, a, -120.0)
            for t, a in zip(rng.uniform(1e-9, 50e-9, 30), rng.uniform(0, 360, 30))
        ]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = extract_mpcs(grid_of(noise), noise_floor_db=-110.0)
        assert len(got) == 0

    def test_floor_above_max_warns_and_returns_empty(self):
        with pytest.warns(UserWarning, match="below the noise floor"):
            got = extract_mpcs(
                grid_of([Mpc(4e-9, 0.0, 0.0, -80.0)]), noise_floor_db=-10.0
            )
        assert len(got) == 0

    def test_paper_table_five_paths(self):
        """The measured Rx2 path table: delays 4.15..7.5 ns, two of them one
        delay bin and one azimuth bin apart, resolved by per-cell search."""
        table = [
            Mpc(4.15e-9, 0.0, 60.0, -82.91),
            Mpc(4.2e-9, 0.0, 70.0, -84.02),
            Mpc(5.3e-9, 30.0, 60.0, -97.64),
            Mpc(6.4e-9, 30.0, 140.0, -102.193),
            Mpc(7.5e-9, 0.0, 290.0, -94.13),
        ]
        got = extract_mpcs(grid_of(table), noise_floor_db=-115.0, delay_only=True)
        assert len(got) == 5
        for m, p in zip(got, sorted(table, key=lambda x: x.tau)):
            assert abs(m.tau - p.tau) <= 0.05e-9

    def test_neighbor_suppression_in_volume_mode(self):
        # the default 3x3x3 strict-maximum search merges the adjacent pair
        table = [
            Mpc(4.15e-9, 0.0, 60.0, -82.91),
            Mpc(4.2e-9, 0.0, 70.0, -84.02),
        ]
        got = extract_mpcs(grid_of(table), noise_floor_db=-115.0)
        assert len(got) == 1

    def test_round_trip_random_plants(self):
        """synthesize -> IDFT -> extract recovers up to 8 planted MPCs."""
        rng = np.random.default_rng(123)
        step = 1.0 / (2001 * 1e7)
        for _ in range(10):
            k = int(rng.integers(2, 9))
            delays = np.sort(rng.uniform(1e-9, 60e-9, k))
            while np.any(np.diff(delays) < 3.5 * step):
                delays = np.sort(rng.uniform(1e-9, 60e-9, k))
            cells = rng.choice(18 * 9, size=k, replace=False)
            az = (cells % 18) * 20.0  # even azimuth bins: never adjacent
            zen = (cells // 18) * 20.0 - 80.0  # even zenith bins
            powers = -80.0 - rng.uniform(0.0, 25.0, k)
            powers[int(rng.integers(0, k))] = -80.0
            planted = [
                Mpc(float(t), float(z), float(a), float(p))
                for t, z, a, p in zip(delays, zen, az, powers)
            ]
            got = extract_mpcs(grid_of(planted), noise_floor_db=-140.0)
            assert len(got) == k
            for m, p in zip(got, planted):
                assert abs(m.tau - p.tau) <= step
                assert abs(m.power_db - p.power_db) <= 0.5

    def test_hann_round_trip(self):
        planted = [Mpc(4.012e-9, 0.0, 60.0, -80.0), Mpc(7.533e-9, 30.0, 290.0, -94.0)]
        got = extract_mpcs(grid_of(planted, window="hann"), noise_floor_db=-110.0)
        assert len(got) == 2
        for m, p in zip(got, planted):
            assert abs(m.tau - p.tau) <= 0.05e-9
            assert abs(m.power_db - p.power_db) <= 0.5

    def test_delay_resolution_property(self):
        step = 1.0 / (2001 * 1e7)
        close = [Mpc(100 * step, 0.0, 60.0, -80.0), Mpc(101 * step, 0.0, 60.0, -80.0)]
        far = [Mpc(100 * step, 0.0, 60.0, -80.0), Mpc(104 * step, 0.0, 60.0, -80.0)]
        assert len(extract_mpcs(grid_of(close), noise_floor_db=-110.0)) <= 2
        assert len(extract_mpcs(grid_of(far), noise_floor_db=-110.0)) == 2


class TestReflectionLoss:
    def test_path_at_fspl_reference_has_zero_loss(self):
        step = 1.0 / (2001 * 1e7)
        tau = 100 * step
        grid = grid_of([Mpc(tau, 0.0, 0.0, -float(fspl_db(300e9, tau)))])
        assert reflection_loss_of_path(omni_pdp(grid), grid.delay_s, tau, 300e9) == (
            pytest.approx(0.0, abs=1e-9)
        )

    def test_six_db_below_reference(self):
        step = 1.0 / (2001 * 1e7)
        tau = 100 * step
        grid = grid_of([Mpc(tau, 0.0, 0.0, -float(fspl_db(300e9, tau)) - 6.0)])
        assert reflection_loss_of_path(omni_pdp(grid), grid.delay_s, tau, 300e9) == (
            pytest.approx(6.0, abs=1e-9)
        )

    def test_zero_power_bin_rejected(self):
        grid = grid_of([Mpc(4e-9, 0.0, 0.0, -80.0)])
        p = omni_pdp(grid).copy()
        p[50] = 0.0
        with pytest.raises(ValueError):
            reflection_loss_of_path(p, grid.delay_s, 50 * grid.delay_resolution_s, 300e9)

    def test_glass_single_bounce_recovers_db_value(self, single_material_db):
        """Trace a near-normal glass bounce and recover its ~2.42 dB loss."""
        step = 1.0 / (2001 * 1e7)
        m = 134
        length = SPEED_OF_LIGHT * m * step  # put the bounce exactly on a bin
        half = math.sqrt((length / 2.0) ** 2 - 1.0)
        floor = (
            Facet(((-50.0, -50.0, 0.0), (50.0, -50.0, 0.0), (50.0, 50.0, 0.0)), "glass"),
            Facet(((-50.0, -50.0, 0.0), (50.0, 50.0, 0.0), (-50.0, 50.0, 0.0)), "glass"),
        )
        scene = Scene(
            floor, {}, {}, Box((-60, -60, -1), (60, 60, 10)), single_material_db
        )
        paths = trace(
            scene, (0.0, 0.0, 1.0), (2.0 * half, 0.0, 1.0),
            TraceConfig(molecular_absorption_db_per_m=0.0),
        )
        bounce = [p for p in paths if p.order == 1][0]
        assert bounce.tau == pytest.approx(m * step, rel=1e-9)
        grid = grid_of(paths)
        rl = reflection_loss_of_path(omni_pdp(grid), grid.delay_s, bounce.tau, 300e9)
        assert rl == pytest.approx(2.42, abs=0.5)


class TestCsvInterchange:
    def test_mpcset_round_trip(self, tmp_path):
        mpcs = MpcSet(
            (
                Mpc(4.1e-9, 0.0, 60.0, -82.5, order=1, chain=("glass",)),
                Mpc(6.3e-9, 30.0, 140.0, -97.0, order=2, chain=("glass", "rubber")),
                Mpc(2.0e-9, 10.0, 10.0, -80.0),
            ),
            source="measured",
        )
        p = tmp_path / "mpcs.csv"
        save_mpcset_csv(mpcs, p)
        again = load_mpc_csv(p)
        assert again.source == "measured"
        assert len(again) == 3
        assert again.paths[0].tau == pytest.approx(2.0e-9, rel=1e-5)
        assert again.paths[1].chain == ("glass",)
        assert again.paths[2].order == 2

    def test_traced_paths_csv(self, tmp_path, cabin):
        paths = trace(cabin, cabin.tx["tx1"], cabin.rx["rx2"], TraceConfig())
        p = tmp_path / "paths.csv"
        save_paths_csv(paths, p)
        again = load_mpc_csv(p)
        assert len(again) == len(paths)
        assert again.paths[0].order == 0

    def test_cfr_round_trip_and_lattice(self, tmp_path):
        cfr = synthesize_cfr(
            [Mpc(3e-9, 0.0, 60.0, -80.0)],
            295e9,
            305e9,
            41,
            azimuth_bins=np.arange(0.0, 360.0, 90.0),
            zenith_bins=np.array([-10.0, 0.0, 10.0]),
        )
        p = tmp_path / "cfr.csv"
        save_cfr_csv(cfr, p)
        again = load_cfr_csv(p)
        assert again.values.shape == cfr.values.shape
        assert np.allclose(again.values, cfr.values, atol=1e-7)
        # remove one row: the lattice is no longer complete
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(LatticeError):
            load_cfr_csv(p)

    def test_padp_csv(self, tmp_path):
        grid = grid_of([Mpc(4e-9, 0.0, 60.0, -80.0)])
        p = tmp_path / "padp.csv"
        save_padp_csv(grid, p)
        header = p.read_text().splitlines()
        assert header[0].startswith("# version:")
        assert header[1] == "tau_ns,azimuth_deg,power_db"
        assert len(header) > 2
