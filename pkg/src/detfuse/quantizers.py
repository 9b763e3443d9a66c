"""Per-sensor grid quantizers, quantized outcome pmfs, and histogram logs.

Each sensor quantizes its observation on a uniform grid over a finite
window [y_min, y_max] with cell width delta. A quantizer assigns each
grid cell an r-bit code, one bit vector per bit position over the cells;
observations outside the window clamp to the boundary cells. The fusion
center only ever sees the concatenated codes, indexed sensor-major and
bit-minor, little-endian:

    outcome = sum_i local_i << offset_i,   local_i = sum_t bit_it << t,

with offset_i the total rate of sensors before i. For the canonical
two-sensor one-bit setup this is outcome = u1 + 2 u2.

Outcome probabilities are computed by midpoint-rule cell masses
(joint density at cell midpoints times the cell volume), renormalized
over the window, which keeps the quantized mixture pmf exactly affine in
the prior p0.

Histogram logs are line-delimited JSON, one record per collection stage:
stage index, sample count, the quantizer bank (bit vectors hex-packed,
cell 0 in the least significant bit), and the outcome counts. A log is
all the state the estimator needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from .copulas import CopulaFamily, clayton_density_grid, copula_density
from .models import HypothesisModel, MixtureModel


@dataclass(frozen=True)
class SensorGrid:
    """Uniform quantization grid on a finite observation window."""

    y_min: float
    y_max: float
    delta: float

    def __post_init__(self):
        if not (np.isfinite(self.y_min) and np.isfinite(self.y_max) and self.y_max > self.y_min):
            raise ValueError(f"need y_max > y_min, got [{self.y_min}, {self.y_max}]")
        if not (np.isfinite(self.delta) and self.delta > 0.0):
            raise ValueError(f"cell width must be > 0, got {self.delta}")
        n = (self.y_max - self.y_min) / self.delta
        if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
            raise ValueError(
                f"window [{self.y_min}, {self.y_max}] is not a whole number of "
                f"cells of width {self.delta}"
            )

    @property
    def n_cells(self) -> int:
        return int(round((self.y_max - self.y_min) / self.delta))

    def midpoints(self) -> np.ndarray:
        return self.y_min + (np.arange(self.n_cells) + 0.5) * self.delta

    def edges(self) -> np.ndarray:
        return self.y_min + np.arange(self.n_cells + 1) * self.delta

    def cell_of(self, y) -> np.ndarray:
        """Cell index per observation; values outside the window clamp to
        the boundary cells."""
        y = np.asarray(y, dtype=float)
        idx = np.floor((y - self.y_min) / self.delta).astype(np.int64)
        return np.clip(idx, 0, self.n_cells - 1)


class QuantizerBank:
    """Bit assignments for every sensor on their grids.

    Parameters
    ----------
    grids : sequence of SensorGrid
    bits : sequence of array_like
        One (rate_i, n_cells_i) 0/1 array per sensor; row t holds bit t
        of the code for every cell. Arrays are copied and frozen.
    """

    def __init__(self, grids, bits):
        self.grids = tuple(grids)
        if len(bits) != len(self.grids):
            raise ValueError(f"{len(bits)} bit arrays for {len(self.grids)} grids")
        frozen = []
        for grid, b in zip(self.grids, bits):
            b = np.ascontiguousarray(b, dtype=np.uint8)
            if b.ndim != 2 or b.shape[1] != grid.n_cells:
                raise ValueError(
                    f"bit array shape {b.shape} does not match a grid of "
                    f"{grid.n_cells} cells"
                )
            if b.shape[0] < 1:
                raise ValueError("each sensor needs at least one bit")
            if not np.all((b == 0) | (b == 1)):
                raise ValueError("bit arrays must contain only 0 and 1")
            b.setflags(write=False)
            frozen.append(b)
        self.bits = tuple(frozen)

    @classmethod
    def from_indicators(cls, grids, indicators) -> "QuantizerBank":
        """Build a bank from affine threshold indicators.

        ``indicators[i]`` is a list of (a, b) pairs, one per bit of
        sensor i; bit t of cell m is 1 iff a * midpoint_m + b >= 0.
        """
        bits = []
        for grid, coeffs in zip(grids, indicators):
            mids = grid.midpoints()
            rows = [(a * mids + b >= 0.0).astype(np.uint8) for a, b in coeffs]
            bits.append(np.stack(rows))
        return cls(grids, bits)

    @classmethod
    def random(cls, grids, rates, rng: np.random.Generator) -> "QuantizerBank":
        """Uniformly random bit assignments at the given per-sensor rates."""
        bits = [
            rng.integers(0, 2, size=(r, g.n_cells), dtype=np.uint8)
            for g, r in zip(grids, rates)
        ]
        return cls(grids, bits)

    @property
    def n_sensors(self) -> int:
        return len(self.grids)

    @property
    def rates(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.bits)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for r in self.rates:
            out.append(acc)
            acc += r
        return tuple(out)

    @property
    def total_rate(self) -> int:
        return sum(self.rates)

    @property
    def n_outcomes(self) -> int:
        return 1 << self.total_rate

    def local_outcomes(self, i: int) -> np.ndarray:
        """Per-cell local code of sensor i, shape (n_cells_i,)."""
        b = self.bits[i].astype(np.int64)
        weights = np.int64(1) << np.arange(b.shape[0], dtype=np.int64)
        return weights @ b

    def onehot(self, i: int) -> np.ndarray:
        """Cell-to-local-code indicator matrix, shape (n_cells_i, 2^rate_i)."""
        local = self.local_outcomes(i)
        out = np.zeros((local.size, 1 << self.rates[i]))
        out[np.arange(local.size), local] = 1.0
        return out

    def outcome_table(self) -> np.ndarray:
        """Global outcome per joint cell, shape (n_cells_1, ..., n_cells_L)."""
        shape = [g.n_cells for g in self.grids]
        table = np.zeros(shape, dtype=np.int64)
        for i, off in enumerate(self.offsets):
            local = self.local_outcomes(i) << off
            view = [None] * len(shape)
            view[i] = slice(None)
            table = table + local[tuple(view)]
        return table

    def quantize(self, y) -> np.ndarray:
        """Global outcome per observation row, trailing axis over sensors."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1:] != (self.n_sensors,):
            raise ValueError(
                f"expected trailing axis of length {self.n_sensors}, got {y.shape}"
            )
        out = np.zeros(y.shape[:-1], dtype=np.int64)
        for i, off in enumerate(self.offsets):
            cells = self.grids[i].cell_of(y[..., i])
            out += self.local_outcomes(i)[cells] << off
        return out

    def with_bits(self, i: int, new_bits) -> "QuantizerBank":
        """Copy of the bank with sensor i's bit array replaced."""
        bits = list(self.bits)
        bits[i] = new_bits
        return QuantizerBank(self.grids, bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizerBank):
            return NotImplemented
        return self.grids == other.grids and all(
            np.array_equal(a, b) for a, b in zip(self.bits, other.bits)
        )

    __hash__ = None

    def __repr__(self) -> str:
        rs = ",".join(str(r) for r in self.rates)
        ms = ",".join(str(g.n_cells) for g in self.grids)
        return f"QuantizerBank(rates=[{rs}], cells=[{ms}])"


@lru_cache(maxsize=64)
def _hypothesis_cell_mass(model: HypothesisModel, grids) -> np.ndarray:
    mids = [g.midpoints() for g in grids]
    weights = [
        m.pdf(x) * g.delta for m, g, x in zip(model.marginals, grids, mids)
    ]
    if model.copula.family is CopulaFamily.CLAYTON:
        u = [m.cdf(x) for m, x in zip(model.marginals, mids)]
        dens = clayton_density_grid(u[0], u[1], model.theta)
        return dens * np.multiply.outer(weights[0], weights[1])
    return reduce(np.multiply.outer, weights)


def cell_mass(model, grids) -> np.ndarray:
    """Midpoint-rule probability mass per joint grid cell.

    Parameters
    ----------
    model : HypothesisModel or MixtureModel
    grids : sequence of SensorGrid

    Returns
    -------
    ndarray, shape (n_cells_1, ..., n_cells_L)
        Unnormalized masses density(midpoint) * cell volume; they sum to
        the window coverage of the model (slightly below 1 when the
        window truncates the support). Results are cached per
        (hypothesis, grids).
    """
    grids = tuple(grids)
    if isinstance(model, MixtureModel):
        return model.p0 * _hypothesis_cell_mass(model.h0, grids) + model.p1 * (
            _hypothesis_cell_mass(model.h1, grids)
        )
    if len(grids) != model.n_sensors:
        raise ValueError(f"{len(grids)} grids for {model.n_sensors} sensors")
    return _hypothesis_cell_mass(model, grids)


@dataclass
class QuantizedPmf:
    """Outcome pmf induced by a model through a quantizer bank.

    ``probabilities`` is renormalized over the quantizer window, so it
    sums to 1 even when the window truncates the model support. For a
    mixture model the pmf is the prior-weighted combination of the two
    renormalized hypothesis pmfs, which makes it exactly affine in p0.
    """

    probabilities: np.ndarray
    model: object
    bank: QuantizerBank


def quantized_pmf(model, bank: QuantizerBank) -> QuantizedPmf:
    """Outcome pmf of a hypothesis or mixture model under a bank."""
    if isinstance(model, MixtureModel):
        pmf0 = quantized_pmf(model.h0, bank).probabilities
        pmf1 = quantized_pmf(model.h1, bank).probabilities
        return QuantizedPmf(model.p0 * pmf0 + model.p1 * pmf1, model, bank)
    mass = cell_mass(model, bank.grids)
    probs = np.bincount(
        bank.outcome_table().ravel(), weights=mass.ravel(), minlength=bank.n_outcomes
    )
    return QuantizedPmf(probs / probs.sum(), model, bank)


def count_outcomes(bank: QuantizerBank, y) -> np.ndarray:
    """Histogram of quantized outcomes for a batch of observations."""
    return np.bincount(bank.quantize(y), minlength=bank.n_outcomes).astype(np.int64)


@dataclass
class HistogramGroup:
    """Outcome counts collected during one stage under one bank."""

    stage: int
    n: int
    bank: QuantizerBank
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.bank.n_outcomes,):
            raise ValueError(
                f"counts shape {self.counts.shape} does not match "
                f"{self.bank.n_outcomes} outcomes"
            )
        if np.any(self.counts < 0):
            raise ValueError("outcome counts must be nonnegative")
        if int(self.counts.sum()) != self.n:
            raise ValueError(
                f"counts sum to {int(self.counts.sum())} but n = {self.n}"
            )


@dataclass
class QuantizedHistogram:
    """Accumulated histogram groups across feedback stages."""

    groups: list

    def __post_init__(self):
        stages = [g.stage for g in self.groups]
        if len(set(stages)) != len(stages):
            raise ValueError(f"duplicate stage indices: {stages}")
        self.groups = sorted(self.groups, key=lambda g: g.stage)

    @property
    def n_total(self) -> int:
        return sum(g.n for g in self.groups)


def pack_bits(bitvec) -> str:
    """Hex-pack a 0/1 vector, cell 0 in the least significant bit."""
    bitvec = np.asarray(bitvec)
    value = 0
    for m in range(bitvec.size - 1, -1, -1):
        value = (value << 1) | int(bitvec[m])
    width = (bitvec.size + 3) // 4
    return format(value, f"0{width}x")


def unpack_bits(packed: str, n: int) -> np.ndarray:
    """Invert :func:`pack_bits` for a vector of known length."""
    value = int(packed, 16)
    if value >> n:
        raise ValueError(f"hex string {packed!r} has bits beyond length {n}")
    return np.array([(value >> m) & 1 for m in range(n)], dtype=np.uint8)


def _bank_to_json(bank: QuantizerBank) -> list:
    return [
        {
            "y_min": g.y_min,
            "y_max": g.y_max,
            "delta": g.delta,
            "bits": [pack_bits(row) for row in b],
        }
        for g, b in zip(bank.grids, bank.bits)
    ]


def _bank_from_json(records) -> QuantizerBank:
    grids, bits = [], []
    for rec in records:
        grid = SensorGrid(rec["y_min"], rec["y_max"], rec["delta"])
        grids.append(grid)
        bits.append(
            np.stack([unpack_bits(row, grid.n_cells) for row in rec["bits"]])
        )
    return QuantizerBank(grids, bits)


def write_histogram_log(hist: QuantizedHistogram, path) -> None:
    """Write one JSON record per group, line-delimited."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in hist.groups:
            rec = {
                "stage": g.stage,
                "n": g.n,
                "quantizers": _bank_to_json(g.bank),
                "counts": [int(c) for c in g.counts],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_histogram_log(path) -> QuantizedHistogram:
    """Read a histogram log written by :func:`write_histogram_log`."""
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            bank = _bank_from_json(rec["quantizers"])
            groups.append(
                HistogramGroup(
                    stage=int(rec["stage"]),
                    n=int(rec["n"]),
                    bank=bank,
                    counts=np.array(rec["counts"], dtype=np.int64),
                )
            )
    return QuantizedHistogram(groups)
