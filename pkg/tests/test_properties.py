"""Invariants checked over generated inputs."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from pilesim.electrical import (ReadoutConfig, absorbed_fraction, divider_voltage,
                                effective_permittivity, snr_db)
from pilesim.geometry import (BendDirection, Strain, StrainAxis, apex_spacing_scale,
                              build_pile_model, compressed_height, deform)
from pilesim.network import (ResistorNetwork, detect_contacts, equivalent_resistance,
                             segment_distances)
from pilesim.protocol import preset

from oracles import nodal_resistance, segment_distance

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Five decades of resistance.  Wider spreads lose digits to cancellation in
# any elimination order, so a 1e-9 comparison would test float rounding.
ohms = st.floats(0.1, 1e4)


@st.composite
def connected_networks(draw, max_nodes=12):
    n = draw(st.integers(2, max_nodes))
    parents = [draw(st.integers(0, k - 1)) for k in range(1, n)]
    edges = [(k, p, draw(ohms)) for k, p in zip(range(1, n), parents)]
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), ohms),
                          max_size=2 * n))
    edges += [(u, v, r) for u, v, r in extra if u != v]
    a, b = draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
    return n, edges, a, b


def solve(n, edges, a, b):
    return equivalent_resistance(
        ResistorNetwork.from_edges(n, [(u, v, 1.0 / r) for u, v, r in edges], a, b))


@given(connected_networks())
def test_matches_nodal_oracle(case):
    n, edges, a, b = case
    assert solve(*case) == pytest.approx(nodal_resistance(n, edges, a, b), rel=1e-9)


@given(connected_networks(), st.data())
def test_rayleigh_monotonicity(case, data):
    n, edges, a, b = case
    base = solve(*case)
    u, v = data.draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
    added = solve(n, edges + [(u, v, data.draw(ohms))], a, b)
    assert added <= base * (1 + 1e-9)
    # lowering one resistance is the same as adding a parallel conductor
    k = data.draw(st.integers(0, len(edges) - 1))
    lowered = list(edges)
    lowered[k] = (edges[k][0], edges[k][1], edges[k][2] / 2)
    assert solve(n, lowered, a, b) <= base * (1 + 1e-9)


@given(connected_networks(), st.randoms(use_true_random=False))
def test_permutation_invariance(case, rnd):
    n, edges, a, b = case
    perm = list(range(n))
    rnd.shuffle(perm)
    relabeled = [(perm[u], perm[v], r) for u, v, r in edges]
    rnd.shuffle(relabeled)
    assert solve(n, relabeled, perm[a], perm[b]) == pytest.approx(solve(*case), rel=1e-9)


@given(st.lists(ohms, min_size=1, max_size=10))
def test_series_and_parallel_laws(rs):
    chain = [(k, k + 1, r) for k, r in enumerate(rs)]
    assert solve(len(rs) + 1, chain, 0, len(rs)) == pytest.approx(sum(rs), rel=1e-9)
    bundle = [(0, 1, r) for r in rs]
    assert solve(2, bundle, 0, 1) == pytest.approx(1 / sum(1 / r for r in rs), rel=1e-9)


@given(connected_networks())
def test_reciprocity(case):
    n, edges, a, b = case
    assert solve(n, edges, b, a) == pytest.approx(solve(*case), rel=1e-9)


coords = st.floats(-10, 10)
points = st.tuples(coords, coords, coords)


@given(points, points, points, points)
def test_segment_distance_matches_oracle(p0, p1, q0, q1):
    args = [np.array([p], float) for p in (p0, p1, q0, q1)]
    d, s, t = segment_distances(*args)
    ref = segment_distance(p0, p1, q0, q1)
    assert d[0] == pytest.approx(ref, rel=1e-7, abs=1e-9)
    assert 0 <= s[0] <= 1 and 0 <= t[0] <= 1
    swapped, _, _ = segment_distances(args[2], args[3], args[0], args[1])
    assert swapped[0] == pytest.approx(d[0], rel=1e-9, abs=1e-12)


positive = st.floats(1e-3, 1e3)


@given(st.lists(positive, min_size=1, max_size=20),
       st.lists(st.floats(-1, 1), min_size=2, max_size=20), positive)
def test_snr_scaling(signal, baseline, k):
    assume(np.std(baseline, ddof=1) > 1e-6)
    ref = snr_db(signal, baseline)
    assert snr_db([k * x for x in signal], [k * x for x in baseline]) == pytest.approx(ref, abs=1e-9)
    assert snr_db([k * x for x in signal], baseline) == pytest.approx(ref + 20 * math.log10(k),
                                                                      abs=1e-9)


@given(st.floats(0, 1e8), st.floats(0, 1e8), st.floats(0.1, 24), st.floats(1, 1e6))
def test_divider_monotone_and_bounded(r1, r2_extra, v_in, r2):
    cfg = ReadoutConfig(v_in=v_in, r2_ohm=r2)
    lo, hi = divider_voltage(r1, cfg), divider_voltage(r1 + r2_extra, cfg)
    assert 0 <= hi <= lo <= v_in


@given(st.floats(0, 1e8), st.integers(8, 16))
def test_adc_error_within_half_lsb(r1, bits):
    exact = divider_voltage(r1, ReadoutConfig())
    q = divider_voltage(r1, ReadoutConfig(adc_bits=bits))
    assert abs(q - exact) <= 3.3 / (2 ** bits - 1) / 2 * (1 + 1e-9)


@given(st.floats(0, 1), st.floats(0, 1))
def test_permittivity_monotone(a, b):
    s = preset("S2")
    lo, hi = sorted((a, b))
    assert effective_permittivity(s, lo) <= effective_permittivity(s, hi)


@given(st.floats(0, 100), st.floats(0, 100))
def test_absorbed_fraction_monotone(a, b):
    s = preset("S6")
    lo, hi = sorted((a, b))
    assert 0 <= absorbed_fraction(s, lo) <= absorbed_fraction(s, hi) <= 1


@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4), st.floats(1, 200))
def test_height_monotone_in_load_and_stiffness(p1, p2, k):
    assume(abs(p1 - p2) > 1e-6 * max(p1, p2))
    spec = replace(preset("S2"), stiffness_scale=k)
    lo, hi = sorted((p1, p2))
    assert compressed_height(spec, hi) < compressed_height(spec, lo) <= spec.pile_height_cm
    stiffer = replace(spec, stiffness_scale=k * 1.5)
    assert compressed_height(stiffer, lo) > compressed_height(spec, lo)


@given(st.floats(0.2, 20), st.floats(0.05, 2.0))
def test_bending_asymmetry(rod_diameter, height):
    r = rod_diameter / 2
    assert apex_spacing_scale(r, BendDirection.CONCAVE, height) < 1
    assert apex_spacing_scale(r, BendDirection.CONVEX, height) > 1


small_spec = replace(preset("S2"), base_width_cm=1.5, base_depth_cm=1.5)


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32), st.sampled_from([0.25, 0.5, 2.0, 4.0]),
       st.sampled_from(["S2", "S5", "S7"]))
def test_contacts_scale_consistent(seed, k, pid):
    spec = replace(preset(pid), base_width_cm=1.5, base_depth_cm=1.5)
    m = build_pile_model(spec, seed)
    # powers of two scale every coordinate exactly
    assert detect_contacts(m.scaled(k)).keys() == detect_contacts(m).keys()


@settings(max_examples=10)
@given(st.integers(0, 2 ** 63 - 1))
def test_build_is_deterministic(seed):
    a, b = build_pile_model(small_spec, seed), build_pile_model(small_spec, seed)
    assert np.array_equal(a.strands, b.strands)
    assert detect_contacts(a) == detect_contacts(b)


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32), st.sampled_from(list(StrainAxis)), st.floats(0, 20))
def test_strain_keeps_base_on_plane(seed, axis, pct):
    m = build_pile_model(small_spec, seed)
    d = deform(m, small_spec, Strain(axis, pct))
    assert np.all(d.strands[:, [0, -1], 2] == 0)
    assert np.array_equal(d.strands[:, :, 2], m.strands[:, :, 2])
