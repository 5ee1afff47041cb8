import math

import numpy as np
import pytest

from thzcabin.channel import Mpc, MpcSet
from thzcabin.hybrid import (
    EmpiricalCdf,
    cluster_mpcs,
    empirical_cdf,
    identify_clusters,
    identify_material,
    load_hybrid_model,
    save_hybrid_model,
    synthesize_realization,
)
from thzcabin.raytrace import PathRecord
from thzcabin.rf import fspl_db

F = 300e9


def record(tau, az, zen, power, chain=()):
    return PathRecord(
        tau=tau,
        azimuth_deg=az,
        zenith_deg=zen,
        power_db=power,
        complex_gain=10.0 ** (power / 20.0) + 0j,
        bounce_chain=chain,
    )


def mpc(tau, az, zen, power):
    return Mpc(tau=tau, zenith_deg=zen, azimuth_deg=az, power_db=power)


def power_for_rl(rl_db, tau):
    """Cluster mean power that decodes to the given reflection loss."""
    return -float(fspl_db(F, tau)) - rl_db


class TestEmpiricalCdf:
    def test_definition(self):
        cdf = empirical_cdf([4.1, 4.3, 4.5])
        assert cdf.eval(4.3) == pytest.approx(2.0 / 3.0)
        assert cdf.eval(4.0999999) == 0.0
        assert cdf.eval(4.5) == 1.0

    def test_limits(self):
        cdf = empirical_cdf([1.0, 2.0])
        assert cdf.eval(-math.inf) == 0.0
        assert cdf.eval(math.inf) == 1.0

    def test_monotone_in_unit_range(self):
        rng = np.random.default_rng(2)
        cdf = EmpiricalCdf(rng.normal(0, 1, 40))
        xs = np.linspace(-4, 4, 500)
        ys = cdf.eval(xs)
        assert np.all(np.diff(ys) >= 0.0)
        assert ys.min() >= 0.0 and ys.max() <= 1.0

    def test_inverse_transform_frequencies(self):
        cdf = EmpiricalCdf([1.0, 2.0, 3.0])
        rng = np.random.default_rng(9)
        draws = cdf.sample(rng, 100_000)
        for v in (1.0, 2.0, 3.0):
            assert np.mean(draws == v) == pytest.approx(1.0 / 3.0, abs=0.01)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            EmpiricalCdf([])


class TestClusterMpcs:
    def test_identity_assignment(self):
        anchors = [record(4e-9, 60.0, 0.0, -82.0), record(7e-9, 200.0, 10.0, -95.0, ((0, "glass"),))]
        measured = MpcSet(tuple(mpc(a.tau, a.azimuth_deg, a.zenith_deg, a.power_db) for a in anchors))
        model = cluster_mpcs(measured, anchors)
        assert len(model.rt_clusters) == 2
        assert all(len(c.subpaths) == 1 for c in model.rt_clusters)
        assert len(model.non_rt_clusters) == 0

    def test_out_of_gate_becomes_non_rt(self):
        anchors = [record(4e-9, 60.0, 0.0, -82.0)]
        measured = MpcSet((mpc(14e-9, 60.0, 0.0, -100.0),))
        model = cluster_mpcs(measured, anchors, gates=(1e-9, 20.0, 20.0))
        assert len(model.non_rt_clusters) == 1
        # the memberless anchor keeps itself as its lone subpath
        assert len(model.rt_clusters[0].subpaths) == 1
        assert model.rt_clusters[0].subpaths[0].tau == 4e-9

    def test_partition(self):
        rng = np.random.default_rng(4)
        anchors = [
            record(t, a, 0.0, -85.0, ((i, "glass"),))
            for i, (t, a) in enumerate(zip((4e-9, 6e-9, 9e-9), (40.0, 160.0, 280.0)))
        ]
        measured = MpcSet(
            tuple(
                mpc(
                    float(rng.uniform(2e-9, 12e-9)),
                    float(rng.uniform(0, 360)),
                    float(rng.uniform(-30, 30)),
                    float(-80 - rng.uniform(0, 30)),
                )
                for _ in range(40)
            )
        )
        model = cluster_mpcs(measured, anchors, gates=(1e-9, 30.0, 30.0))
        placed = []
        for c in (*model.rt_clusters, *model.non_rt_clusters):
            placed += [p for p in c.subpaths]
        anchor_self = sum(
            1
            for c in model.rt_clusters
            if len(c.subpaths) == 1 and c.subpaths[0].tau == c.anchor.tau
            and c.subpaths[0].power_db == c.anchor.power_db
        )
        assert len(placed) - anchor_self == len(measured)

    def test_mean_delay_matches_members(self):
        anchors = [record(4e-9, 60.0, 0.0, -82.0)]
        measured = MpcSet(tuple(mpc(t, 60.0, 0.0, -85.0) for t in (3.9e-9, 4.0e-9, 4.4e-9)))
        model = cluster_mpcs(measured, anchors, gates=(0.5e-9, 20.0, 20.0))
        assert model.rt_clusters[0].mean_delay == pytest.approx(4.1e-9, abs=1e-15)

    def test_paper_cluster_means(self):
        """Five anchors with diffuse members reproducing the reported
        per-cluster mean delays."""
        anchor_delays = (4.04e-9, 4.55e-9, 5.31e-9, 6.79e-9, 7.23e-9)
        azimuths = (60.0, 100.0, 140.0, 200.0, 290.0)
        target_means = (4.34e-9, 5.17e-9, 5.75e-9, 6.29e-9, 8.07e-9)
        anchors = [
            record(t, a, 0.0, -85.0, ((i, "glass"),))
            for i, (t, a) in enumerate(zip(anchor_delays, azimuths))
        ]
        members = []
        for mean, az in zip(target_means, azimuths):
            for dt in (-0.2e-9, 0.0, 0.2e-9):
                members.append(mpc(mean + dt, az, 0.0, -90.0))
        model = cluster_mpcs(MpcSet(tuple(members)), anchors, gates=(1.5e-9, 20.0, 20.0))
        assert len(model.non_rt_clusters) == 0
        got = [c.mean_delay for c in model.rt_clusters]
        for g, want in zip(got, target_means):
            assert abs(g - want) < 0.1e-9

    def test_requires_anchors(self):
        with pytest.raises(ValueError):
            cluster_mpcs(MpcSet(()), [])


class TestIdentifyMaterial:
    def test_composite_beats_singles(self, tds_db):
        # steel 3.6 / glass 5.1 / rubber 15.8: 19.4 -> glass+rubber exactly
        tau = 5e-9
        label = identify_material(power_for_rl(20.9, tau), tau, F, tds_db)
        assert label == "glass+rubber"

    def test_single_match(self, tds_db):
        tau = 5e-9
        assert identify_material(power_for_rl(5.3, tau), tau, F, tds_db) == "glass"

    def test_out_of_tolerance_unknown(self, tds_db):
        tau = 5e-9
        assert identify_material(power_for_rl(50.0, tau), tau, F, tds_db) == "unknown"

    def test_pair_search_example(self):
        from thzcabin.scene import Material, MaterialDb

        db = MaterialDb(
            [
                Material("a", 2.0 + 0j, 0.001, 2.0),
                Material("b", 2.0 + 0j, 0.001, 10.0),
            ]
        )
        tau = 5e-9
        assert identify_material(power_for_rl(12.3, tau), tau, F, db) == "a+b"

    def test_paper_table_regression(self, tds_db):
        """All nine printed cluster labels under the 3 dB tolerance."""
        table = [
            (3.80, "steel"),
            (14.62, "rubber"),
            (16.80, "rubber"),
            (22.70, "glass+rubber"),
            (5.32, "glass"),
            (13.51, "rubber"),
            (20.73, "glass+rubber"),
            (16.56, "rubber"),
            (23.54, "glass+rubber"),
        ]
        tau = 6e-9
        for rl, want in table:
            got = identify_material(power_for_rl(rl, tau), tau, F, tds_db, 3.0)
            assert got == want, f"RL {rl}: got {got}, want {want}"

    def test_identify_clusters_labels_model(self, tds_db):
        anchors = [record(5e-9, 60.0, 0.0, power_for_rl(5.3, 5e-9))]
        measured = MpcSet((mpc(5e-9, 60.0, 0.0, power_for_rl(5.3, 5e-9)),))
        model = cluster_mpcs(measured, anchors)
        labeled = identify_clusters(model, tds_db)
        assert labeled.rt_clusters[0].identified_materials == ("glass",)


class TestSynthesizeRealization:
    def _model(self):
        anchors = [
            record(4e-9, 60.0, 0.0, -84.0, ((3, "glass"),)),
            record(8e-9, 200.0, 10.0, -103.0, ((3, "glass"), (7, "rubber"))),
        ]
        members = [mpc(4e-9 + dt, 60.0 + da, 0.0, -86.0 + dp)
                   for dt, da, dp in ((-0.2e-9, -4, 0.5), (0.1e-9, 3, -0.5), (0.3e-9, 6, 1.0))]
        members += [mpc(8e-9 + dt, 200.0 + da, 10.0, -104.0 + dp)
                    for dt, da, dp in ((-0.3e-9, -5, -1.0), (0.2e-9, 2, 0.8), (0.4e-9, 7, -2.0))]
        return cluster_mpcs(MpcSet(tuple(members)), anchors, gates=(0.6e-9, 20.0, 20.0))

    def test_zero_subpaths_returns_anchors(self):
        model = self._model()
        real = synthesize_realization(model, 0, seed=1)
        assert len(real) == 2
        assert {m.tau for m in real} == {4e-9, 8e-9}

    def test_same_seed_identical(self):
        model = self._model()
        a = synthesize_realization(model, 25, seed=42)
        b = synthesize_realization(model, 25, seed=42)
        assert a == b
        c = synthesize_realization(model, 25, seed=43)
        assert a != c

    def test_anchors_preserved_verbatim(self):
        model = self._model()
        real = synthesize_realization(model, 50, seed=3)
        taus = [m.tau for m in real]
        for c in model.rt_clusters:
            assert c.anchor.tau in taus

    def test_law_of_large_numbers(self):
        model = self._model()
        real = synthesize_realization(model, 10_000, seed=5)
        cluster1 = [m.tau for m in real if abs(m.tau - 4e-9) < 1e-9 and m.tau != 4e-9]
        mean = np.mean(cluster1)
        assert abs(mean - model.rt_clusters[0].mean_delay) < 0.01 * model.rt_clusters[0].mean_delay

    def test_single_bounce_outranks_double_bounce(self):
        """Glass cluster keeps a higher mean power than glass+seat in every
        synthesized realization."""
        model = self._model()
        for seed in range(8):
            real = synthesize_realization(model, 40, seed=seed)
            p1 = [m.power_db for m in real if abs(m.tau - 4e-9) < 1.2e-9]
            p2 = [m.power_db for m in real if abs(m.tau - 8e-9) < 1.2e-9]
            assert np.mean(p1) > np.mean(p2)

    def test_angles_within_observed_span(self):
        model = self._model()
        real = synthesize_realization(model, 200, seed=11)
        sub1 = [m for m in real if abs(m.tau - 4e-9) < 1.2e-9 and m.tau != 4e-9]
        assert all(56.0 <= m.azimuth_deg <= 66.0 for m in sub1)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        anchors = [record(4e-9, 60.0, 0.0, -84.0, ((3, "glass"),))]
        members = [mpc(4.1e-9, 62.0, 1.0, -86.0), mpc(3.9e-9, 58.0, -1.0, -88.0)]
        extra = [mpc(20e-9, 300.0, 5.0, -110.0)]
        model = cluster_mpcs(MpcSet(tuple(members + extra)), anchors, gates=(0.5e-9, 20.0, 20.0))
        p = tmp_path / "model.json"
        save_hybrid_model(model, p)
        again = load_hybrid_model(p)
        assert again.carrier_hz == model.carrier_hz
        assert len(again.rt_clusters) == 1
        assert len(again.non_rt_clusters) == 1
        c0, c1 = again.rt_clusters[0], model.rt_clusters[0]
        assert c0.anchor.bounce_chain == c1.anchor.bounce_chain
        assert c0.mean_delay == pytest.approx(c1.mean_delay)
        assert list(c0.delay_cdf.samples) == list(c1.delay_cdf.samples)
        # realizations from the reloaded model match the original
        assert synthesize_realization(again, 10, 7) == synthesize_realization(model, 10, 7)

    def test_version_check(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"version": "hybrid_model_v999"}')
        with pytest.raises(ValueError, match="version"):
            load_hybrid_model(p)
