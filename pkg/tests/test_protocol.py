import math
from dataclasses import replace

import numpy as np
import pytest

from pilesim.electrical import ReadoutConfig
from pilesim.geometry import BendDirection, PileShape, StrainAxis
from pilesim.protocol import (PRESET_IDS, BendingSweep, CompressionSweep, HumidityTest, Protocol,
                              TensileSweep, paper_suite, preset, run_protocol, split_seed)

CFG = ReadoutConfig()


def small(sample_id, density=3.0):
    return replace(preset(sample_id), stitch_density_per_cm=density)


class TestPresets:
    def test_published_parameters(self):
        s2, s5, s7 = preset("S2"), preset("S5"), preset("S7")
        assert (s2.yarn.diameter_mm, s2.pile_shape, s2.pile_height_cm) == (0.4, PileShape.LOOP, 0.6)
        assert s5.yarn.linear_resistance_ohm_per_cm == 10.5
        assert s7.pile_shape is PileShape.CUT and s7.yarn == s2.yarn
        assert preset("S6").yarn.linear_resistance_ohm_per_cm == 582_000.0
        assert [preset(f"S{k}").pile_height_cm for k in range(1, 5)] == [0.3, 0.6, 0.9, 1.3]
        for pid in PRESET_IDS:
            p = preset(pid)
            assert (p.base_width_cm, p.base_depth_cm, p.stitch_density_per_cm) == (5, 5, 6)

    def test_case_insensitive_and_unknown(self):
        assert preset("s3") == preset("S3")
        with pytest.raises(ValueError):
            preset("S8")


class TestSweeps:
    def test_compression_validation(self):
        with pytest.raises(ValueError):
            CompressionSweep(weights_g=(200, 100))
        with pytest.raises(ValueError):
            CompressionSweep(weights_g=())
        with pytest.raises(ValueError):
            CompressionSweep(weights_g=(-1,))

    def test_labels_in_sweep_order(self):
        assert [c[0] for c in BendingSweep().conditions()] == [
            "convex 1 cm", "convex 3 cm", "convex 5 cm",
            "concave 1 cm", "concave 3 cm", "concave 5 cm"]
        assert [c[0] for c in TensileSweep().conditions()] == ["x 13.3%", "y 13.3%", "bias45 13.3%"]
        assert CompressionSweep().conditions()[0][0] == "100 g"

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            Protocol(HumidityTest(), trials=0)


class TestSplitSeed:
    def test_stable_and_distinct(self):
        assert split_seed(0, 0) == split_seed(0, 0)
        seeds = {split_seed(m, t, c) for m in range(3) for t in range(20) for c in range(3)}
        assert len(seeds) == 180

    def test_known_value(self):
        # pinned so the documented seed derivation cannot drift silently
        ss = np.random.SeedSequence([42, 3, 0])
        assert split_seed(42, 3) == int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class TestRunProtocol:
    def test_zero_weight_gives_exact_zero(self):
        res = run_protocol(small("S2"), CFG, Protocol(CompressionSweep((0.0,)), trials=3))
        assert res.rows[0].mean_response == 0.0
        assert res.rows[0].n == 3

    def test_rows_and_statistics(self):
        p = Protocol(CompressionSweep((200.0, 800.0)), trials=4, master_seed=9)
        res = run_protocol(small("S2"), CFG, p, sample="S2")
        assert [r.label for r in res.rows] == ["200 g", "800 g"]
        for row in res.rows:
            vals = [t.record.delta_v_over_v0 for t in res.records if t.condition == row.condition]
            assert row.n == 4
            assert row.mean_response == pytest.approx(np.mean(vals), rel=1e-12)
            assert row.std_error == pytest.approx(np.std(vals, ddof=1) / 2, rel=1e-12)
            v0 = np.array(res.baselines)
            noise = np.std(v0 / v0.mean(), ddof=1)
            assert row.snr_db == pytest.approx(
                20 * math.log10(np.mean(np.abs(vals)) / noise), rel=1e-12)
        assert res.rows[1].mean_response > res.rows[0].mean_response > 0
        # one noise floor per run: SNR differences come from the signal alone
        gap = res.rows[1].snr_db - res.rows[0].snr_db
        means = [np.mean(np.abs([t.record.delta_v_over_v0 for t in res.records
                                 if t.condition == c])) for c in (0, 1)]
        assert gap == pytest.approx(20 * math.log10(means[1] / means[0]), rel=1e-9)

    def test_deterministic_and_parallel_safe(self):
        p = Protocol(TensileSweep(axes=(StrainAxis.X,)), trials=4, master_seed=5)
        spec = small("S2")
        a = run_protocol(spec, CFG, p)
        b = run_protocol(spec, CFG, p)
        c = run_protocol(spec, CFG, p, workers=2)
        assert a == b == c

    def test_prefix_stability(self):
        # adding trials does not disturb the draws of earlier trials
        spec = small("S2")
        a = run_protocol(spec, CFG, Protocol(CompressionSweep((500.0,)), trials=2))
        b = run_protocol(spec, CFG, Protocol(CompressionSweep((500.0,)), trials=3))
        assert a.records == b.records[:2]

    def test_humidity_deterministic_per_trial(self):
        spec = small("S2")
        res = run_protocol(spec, CFG, Protocol(HumidityTest(), trials=3))
        again = run_protocol(spec, CFG, Protocol(HumidityTest(5.0), trials=3))
        assert res == again
        assert all(t.record.capacitance_pf > 0 for t in res.records)
        assert res.rows[0].std_error > 0

    def test_open_circuits_flagged_and_excluded(self):
        spec = replace(preset("S7"), stitch_density_per_cm=1.0)
        res = run_protocol(spec, CFG, Protocol(CompressionSweep((100.0, 500.0)), trials=3))
        assert all(t.flag == "open_baseline" for t in res.records)
        assert all(math.isnan(t.record.delta_v_over_v0) for t in res.records)
        for row in res.rows:
            assert row.n == 0 and row.excluded == 3
            assert math.isnan(row.mean_response)

    def test_bending_signs_small_grid(self):
        res = run_protocol(small("S5"), CFG,
                           Protocol(BendingSweep((1.0,), (BendDirection.CONVEX,
                                                          BendDirection.CONCAVE)), trials=3))
        convex, concave = res.means()
        assert convex < 0 < concave


def test_paper_suite_plan():
    results = paper_suite(trials=1, master_seed=0, piles_per_cm=2.0)
    assert len(results) == 13
    plan = [(r.sample, r.protocol) for r in results]
    assert plan[:7] == [(f"S{k}", "compression") for k in range(1, 8)]
    assert plan[7:9] == [("S5", "bending"), ("S2", "tensile")]
    assert plan[9:] == [(s, "humidity") for s in ("S2", "S5", "S6", "S7")]
    assert all(row.n + row.excluded == 1 for r in results for row in r.rows)
