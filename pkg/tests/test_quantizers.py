import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detfuse.models import GammaMarginal
from detfuse.quantizers import (
    HistogramGroup,
    QuantizedHistogram,
    QuantizerBank,
    SensorGrid,
    cell_mass,
    count_outcomes,
    pack_bits,
    quantized_pmf,
    read_histogram_log,
    unpack_bits,
    write_histogram_log,
)

from conftest import make_scenario


def test_grid_geometry():
    g = SensorGrid(0.0, 60.0, 0.5)
    assert g.n_cells == 120
    mids = g.midpoints()
    assert mids[0] == 0.25
    assert mids[-1] == 59.75
    edges = g.edges()
    assert edges[0] == 0.0 and edges[-1] == 60.0
    assert len(edges) == 121


def test_grid_cell_of_clamps():
    g = SensorGrid(0.0, 60.0, 0.5)
    y = [-1.0, 0.0, 19.99, 20.0, 59.9, 60.0, 100.0]
    np.testing.assert_array_equal(g.cell_of(y), [0, 0, 39, 40, 119, 119, 119])


def test_grid_divisibility_check():
    with pytest.raises(ValueError):
        SensorGrid(0.0, 10.0, 3.0)
    with pytest.raises(ValueError):
        SensorGrid(5.0, 5.0, 1.0)


def test_from_indicators_threshold_bits():
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    # sensor 1 codes y >= 20: first coded cell has midpoint 20.25
    assert bank.bits[0][0, 39] == 0
    assert bank.bits[0][0, 40] == 1
    assert bank.bits[0][0].sum() == 80
    # sensor 2 codes y <= 20: midpoint 19.75 is the last coded cell
    assert bank.bits[1][0, 39] == 1
    assert bank.bits[1][0, 40] == 0
    assert bank.bits[1][0].sum() == 40


def test_outcome_indexing_convention():
    """Joint outcome is sensor-major, bit-minor, little-endian."""
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    assert bank.rates == (1, 1)
    assert bank.offsets == (0, 1)
    assert bank.n_outcomes == 4
    # u1 = I(y1 >= 20), u2 = I(y2 <= 20); outcome = u1 + 2 u2
    y = np.array([[25.0, 10.0], [10.0, 10.0], [25.0, 30.0], [10.0, 30.0]])
    np.testing.assert_array_equal(bank.quantize(y), [3, 2, 1, 0])


def test_outcome_table_matches_quantize():
    g = SensorGrid(0.0, 12.0, 2.0)
    rng = np.random.default_rng(0)
    bank = QuantizerBank.random([g, g], [2, 1], rng)
    table = bank.outcome_table()
    assert table.shape == (6, 6)
    # axis i of the table is sensor i's cell index
    y = rng.uniform(0.0, 12.0, size=(200, 2))
    c1 = bank.grids[0].cell_of(y[:, 0])
    c2 = bank.grids[1].cell_of(y[:, 1])
    np.testing.assert_array_equal(bank.quantize(y), table[c1, c2])


def test_multibit_local_outcomes():
    g = SensorGrid(0.0, 8.0, 2.0)
    bits = np.array([[0, 1, 0, 1], [0, 0, 1, 1]])  # bit0 + 2*bit1 per cell
    bank = QuantizerBank([g], [bits])
    np.testing.assert_array_equal(bank.local_outcomes(0), [0, 1, 2, 3])


def test_bank_equality_and_with_bits():
    g = SensorGrid(0.0, 8.0, 2.0)
    a = QuantizerBank([g], [np.array([[0, 0, 1, 1]])])
    b = QuantizerBank([g], [np.array([[0, 0, 1, 1]])])
    c = a.with_bits(0, np.array([[1, 0, 1, 1]]))
    assert a == b
    assert a != c
    assert a.bits[0][0, 0] == 0  # original unchanged


def test_bank_bits_frozen():
    g = SensorGrid(0.0, 8.0, 2.0)
    bank = QuantizerBank([g], [np.array([[0, 0, 1, 1]])])
    with pytest.raises(ValueError):
        bank.bits[0][0, 0] = 1


def test_pack_unpack_round_trip():
    vec = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1])
    packed = pack_bits(vec)
    np.testing.assert_array_equal(unpack_bits(packed, 9), vec)
    # cell 0 is the least significant bit
    assert pack_bits(np.array([1, 0, 0, 0])) == "1"
    assert pack_bits(np.array([0, 0, 0, 1])) == "8"


@given(st.lists(st.integers(0, 1), min_size=1, max_size=130))
@settings(max_examples=100, deadline=None)
def test_pack_unpack_property(bits):
    vec = np.array(bits)
    np.testing.assert_array_equal(unpack_bits(pack_bits(vec), len(bits)), vec)


def test_quantized_pmf_normalized():
    scen = make_scenario()
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    for model in (scen.hypothesis(0), scen.hypothesis(1), scen.mixture()):
        p = quantized_pmf(model, bank).probabilities
        assert p.shape == (4,)
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_quantized_pmf_factorizes_under_independence():
    """H0 pmf equals the product of per-sensor windowed probabilities."""
    scen = make_scenario()
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    p = quantized_pmf(scen.hypothesis(0), bank).probabilities
    m1, m2 = GammaMarginal(3.0, 4.0), GammaMarginal(5.0, 4.0)
    q1 = (m1.cdf(60.0) - m1.cdf(20.0)) / m1.cdf(60.0)  # P(u1 = 1)
    q2 = m2.cdf(20.0) / m2.cdf(60.0)  # P(u2 = 1)
    want = np.array(
        [(1 - q1) * (1 - q2), q1 * (1 - q2), (1 - q1) * q2, q1 * q2]
    )
    np.testing.assert_allclose(p, want, atol=1e-3)


def test_quantized_pmf_mixture_affine_in_prior():
    scen = make_scenario()
    g = SensorGrid(0.0, 60.0, 1.0)
    rng = np.random.default_rng(2)
    bank = QuantizerBank.random([g, g], [1, 2], rng)
    p0_pmf = quantized_pmf(scen.hypothesis(0), bank).probabilities
    p1_pmf = quantized_pmf(scen.hypothesis(1), bank).probabilities
    for p0 in (0.15, 0.5, 0.85):
        mix = scen.mixture(scen.params.replace_free([p0, 1.0759]))
        got = quantized_pmf(mix, bank).probabilities
        np.testing.assert_allclose(got, p0 * p0_pmf + (1 - p0) * p1_pmf, atol=1e-12)


def test_quantized_pmf_matches_empirical_frequencies():
    scen = make_scenario()
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    h1 = scen.hypothesis(1)
    n = 40000
    y = h1.sample(n, np.random.default_rng(13))
    freq = count_outcomes(bank, y) / n
    p = quantized_pmf(h1, bank).probabilities
    np.testing.assert_allclose(freq, p, atol=4.0 / np.sqrt(n))


def test_cell_mass_orientation():
    """Cell-mass tables index sensor 1 on axis 0."""
    scen = make_scenario()
    g1 = SensorGrid(0.0, 60.0, 0.5)
    g2 = SensorGrid(0.0, 60.0, 1.0)
    t = cell_mass(scen.hypothesis(0), (g1, g2))
    assert t.shape == (120, 60)
    m1, m2 = GammaMarginal(3.0, 4.0), GammaMarginal(5.0, 4.0)
    # row/column sums track the marginal cell masses (midpoint rule)
    np.testing.assert_allclose(
        t.sum(axis=1), m1.pdf(g1.midpoints()) * 0.5 * (m2.pdf(g2.midpoints()).sum()),
        rtol=1e-10,
    )


def test_count_outcomes_matches_quantize():
    scen = make_scenario()
    g = SensorGrid(0.0, 60.0, 1.0)
    bank = QuantizerBank.random([g, g], [1, 1], np.random.default_rng(4))
    y, _ = scen.mixture().sample(500, np.random.default_rng(6))
    counts = count_outcomes(bank, y)
    assert counts.sum() == 500
    np.testing.assert_array_equal(
        counts, np.bincount(bank.quantize(y), minlength=4)
    )


def test_histogram_group_validation():
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    with pytest.raises(ValueError):
        HistogramGroup(1, 10, bank, np.array([5, 5, 5, 5]))
    with pytest.raises(ValueError):
        HistogramGroup(1, 10, bank, np.array([10, 0, 0]))
    with pytest.raises(ValueError):
        HistogramGroup(1, 0, bank, np.array([0, 0, -1, 1]))


def test_histogram_duplicate_stage_rejected():
    g = SensorGrid(0.0, 60.0, 0.5)
    bank = QuantizerBank.from_indicators([g, g], [[(3.0, -60.0)], [(-3.0, 60.0)]])
    grp = HistogramGroup(1, 4, bank, np.array([1, 1, 1, 1]))
    with pytest.raises(ValueError):
        QuantizedHistogram([grp, grp])


def test_histogram_log_round_trip(tmp_path):
    g = SensorGrid(0.0, 60.0, 0.5)
    rng = np.random.default_rng(8)
    groups = []
    for stage in (1, 2, 3):
        bank = QuantizerBank.random([g, g], [1, 1], rng)
        counts = rng.multinomial(200, [0.25] * 4)
        groups.append(HistogramGroup(stage, 200, bank, counts))
    hist = QuantizedHistogram(groups)
    path = tmp_path / "hist.jsonl"
    write_histogram_log(hist, path)
    back = read_histogram_log(path)
    assert back.n_total == hist.n_total
    for a, b in zip(hist.groups, back.groups):
        assert a.stage == b.stage
        assert a.n == b.n
        assert a.bank == b.bank
        np.testing.assert_array_equal(a.counts, b.counts)
