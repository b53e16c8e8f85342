"""Datasets, the ``DCNT`` file format, fold assignment and synthetic benchmarks.

Binary layout (little-endian)::

    b"DCNT"  u16 version  u32 n  u32 T  u32 count
    count x ( u8 label  u8 has_mask  [T bytes mask]  n*T f64 row-major )
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import csv
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ParameterError, StabilityError, StratificationError, ValidationError

MAGIC = b"DCNT"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


@dataclass
class Sample:
    matrix: np.ndarray
    label: int
    event_mask: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.label = int(self.label)
        if self.matrix.ndim != 2:
            raise InputError(f"sample {self.id!r}: matrix must be (n, T), got {self.matrix.shape}")
        if self.label not in (0, 1):
            raise InputError(f"sample {self.id!r}: label must be 0 or 1, got {self.label}")
        if self.event_mask is not None:
            self.event_mask = np.asarray(self.event_mask, dtype=bool)
            if self.event_mask.shape != (self.matrix.shape[1],):
                raise InputError(f"sample {self.id!r}: mask length must equal T={self.matrix.shape[1]}")


@dataclass
class Dataset:
    """Samples sharing one ``(n, T)`` shape.

    ``truth`` optionally maps each label to the ``(T, n, n)`` ground-truth
    adjacency of that class (switching-VAR benchmarks).
    """

    samples: list[Sample]
    note: str = ""
    truth: dict[int, np.ndarray] | None = None
    _X: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.samples:
            shape = self.samples[0].matrix.shape
            for s in self.samples:
                if s.matrix.shape != shape:
                    raise InputError(f"sample {s.id!r} has shape {s.matrix.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n(self) -> int:
        return self.samples[0].matrix.shape[0]

    @property
    def T(self) -> int:
        return self.samples[0].matrix.shape[1]

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = np.stack([s.matrix for s in self.samples])
        return self._X

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def masks(self) -> np.ndarray | None:
        if any(s.event_mask is None for s in self.samples):
            return None
        return np.stack([s.event_mask for s in self.samples])

    def class_counts(self) -> dict[int, int]:
        labels = self.labels
        return {0: int((labels == 0).sum()), 1: int((labels == 1).sum())}

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.note, self.truth)

    def validate(self) -> None:
        """Check the invariants of a complete dataset (both classes, finite values)."""
        if not self.samples:
            raise ValidationError("dataset is empty")
        for s in self.samples:
            if not np.all(np.isfinite(s.matrix)):
                raise ValidationError(f"sample {s.id!r} contains NaN or Inf")
        counts = self.class_counts()
        if min(counts.values()) == 0:
            raise ValidationError(f"dataset must contain both classes, got counts {counts}")


def sample_id(index: int) -> str:
    return f"s{index:06d}"


# ---------------------------------------------------------------------------
# file formats


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def encode_dataset(ds: Dataset) -> bytes:
    if not ds.samples:
        raise ValidationError("cannot serialize an empty dataset")
    parts = [_HEADER.pack(MAGIC, DATASET_VERSION, ds.n, ds.T, len(ds))]
    for s in ds.samples:
        has_mask = s.event_mask is not None
        parts.append(struct.pack("<BB", s.label, int(has_mask)))
        if has_mask:
            parts.append(s.event_mask.astype(np.uint8).tobytes())
        parts.append(np.ascontiguousarray(s.matrix, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_dataset(ds))


def decode_dataset(blob: bytes, source: str = "<bytes>") -> Dataset:
    if len(blob) < _HEADER.size + 4:
        raise FormatError(f"{source}: file too short for a DCNT header")
    magic, version, n, T, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if n == 0 or T == 0:
        raise FormatError(f"{source}: invalid shape n={n}, T={T}")
    body_end = len(blob) - 4
    (crc,) = struct.unpack_from("<I", blob, body_end)
    pos = _HEADER.size
    samples = []
    width = 8 * n * T
    for i in range(count):
        if pos + 2 > body_end:
            raise FormatError(f"{source}: truncated at sample {i}")
        label, has_mask = blob[pos], blob[pos + 1]
        pos += 2
        if label not in (0, 1) or has_mask not in (0, 1):
            raise FormatError(f"{source}: sample {i} has invalid label/mask flag")
        mask = None
        if has_mask:
            if pos + T > body_end:
                raise FormatError(f"{source}: truncated in mask of sample {i}")
            raw = np.frombuffer(blob, dtype=np.uint8, count=T, offset=pos)
            if raw.max(initial=0) > 1:
                raise FormatError(f"{source}: sample {i} mask has values other than 0/1")
            mask = raw.astype(bool)
            pos += T
        if pos + width > body_end:
            raise FormatError(f"{source}: truncated in values of sample {i}")
        values = np.frombuffer(blob, dtype="<f8", count=n * T, offset=pos).reshape(n, T)
        pos += width
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{source}: sample {i} contains NaN or Inf")
        samples.append(Sample(values.astype(np.float64), label, mask, sample_id(i)))
    if pos != body_end:
        raise FormatError(f"{source}: {body_end - pos} unexpected trailing bytes")
    if zlib.crc32(blob[:body_end]) != crc:
        raise FormatError(f"{source}: checksum mismatch")
    return Dataset(samples, note=f"loaded from {source}")


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read and validate a ``DCNT`` dataset file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    ds = decode_dataset(blob, str(path))
    ds.validate()
    return ds


def load_csv_dataset(manifest: str | os.PathLike) -> Dataset:
    """Import samples listed in a manifest CSV with columns ``id,label,mask_file``.

    Each sample lives in ``<id>.csv`` next to the manifest as ``n`` rows by
    ``T`` columns; ``mask_file`` (optional, may be empty) holds one row of
    ``T`` zeros and ones.
    """
    manifest = Path(manifest)
    root = manifest.parent
    samples = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "label"} <= set(reader.fieldnames):
            raise FormatError(f"{manifest}: manifest needs id and label columns")
        for row in reader:
            sid = row["id"].strip()
            try:
                values = np.loadtxt(root / f"{sid}.csv", delimiter=",", ndmin=2)
                label = int(row["label"])
            except ValueError as exc:
                raise FormatError(f"{manifest}: sample {sid!r}: {exc}") from None
            mask = None
            mask_file = (row.get("mask_file") or "").strip()
            if mask_file:
                mask = np.loadtxt(root / mask_file, delimiter=",", ndmin=1).astype(bool)
            if not np.all(np.isfinite(values)):
                raise FormatError(f"{manifest}: sample {sid!r} contains NaN or Inf")
            samples.append(Sample(values, label, mask, sid))
    ds = Dataset(samples, note=f"imported from {manifest}")
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# folds


def split_folds(dataset: Dataset, k: int, seed: int = 0) -> np.ndarray:
    """Stratified, seed-deterministic fold id for every sample.

    Samples are shuffled within each class and dealt round-robin, continuing
    the deal across classes, so every class and every fold size differs by at
    most one between folds.
    """
    if k < 2:
        raise ParameterError(f"need at least 2 folds, got {k}")
    labels = dataset.labels
    counts = dataset.class_counts()
    if k > min(counts.values()):
        raise StratificationError(f"{k} folds but class counts are {counts}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in (0, 1)])
    folds = np.empty(len(labels), dtype=np.int64)
    folds[order] = np.arange(len(order)) % k
    return folds


def split_indices(dataset: Dataset, sizes: tuple[int, ...], seed: int = 0) -> list[np.ndarray]:
    """Stratified disjoint index sets of the given sizes (e.g. 600/200/200)."""
    if sum(sizes) > len(dataset):
        raise ParameterError(f"sizes {sizes} exceed dataset size {len(dataset)}")
    labels = dataset.labels
    rng = np.random.default_rng(seed)
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in (0, 1)]
    frac = len(pools[1]) / len(labels)
    out = []
    for size in sizes:
        n1 = int(round(size * frac))
        take = [pools[0][:size - n1], pools[1][:n1]]
        pools = [pools[0][size - n1:], pools[1][n1:]]
        out.append(np.sort(np.array(take[0] + take[1], dtype=np.int64)))
    return out


# ---------------------------------------------------------------------------
# keyword-in-noise benchmark


def smoothed_noise(rng: np.random.Generator, n: int, T: int, width: int = 3) -> np.ndarray:
    """Per-channel moving-average noise standardized to zero mean, unit variance."""
    kernel = np.hanning(width + 2)[1:-1]
    raw = rng.standard_normal((n, T + width - 1))
    out = np.stack([np.convolve(row, kernel, mode="valid") for row in raw])
    out -= out.mean(axis=1, keepdims=True)
    out /= out.std(axis=1, keepdims=True)
    return out


def default_band(n: int) -> tuple[int, int]:
    """Medium-high channel band ``[lo, hi)``: from the middle, three eighths of the channels wide."""
    lo = n // 2
    return lo, min(n, lo + max(1, round(3 * n / 8)))


def keyword_template(n: int, K: int, band: tuple[int, int] | None = None) -> np.ndarray:
    """Fixed ``(n, K)`` keyword pattern: a rising-falling sweep inside the band."""
    lo, hi = default_band(n) if band is None else band
    tau = np.arange(K) / max(1, K - 1)
    envelope = np.sin(np.pi * tau)
    template = np.zeros((n, K))
    for offset, c in enumerate(range(lo, hi)):
        frac = offset / max(1, hi - lo - 1)
        # each channel peaks slightly later than the one below it
        template[c] = envelope * np.cos(np.pi * (tau - 0.5 - 0.25 * (frac - 0.5)))
    return template


def _match_amplitudes(mixed: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Replace each channel's values by the reference values of the same rank."""
    out = np.empty_like(mixed)
    ranks = np.argsort(np.argsort(mixed, axis=1, kind="stable"), axis=1, kind="stable")
    ref_sorted = np.sort(reference, axis=1)
    rows = np.arange(mixed.shape[0])[:, None]
    out[rows, np.arange(mixed.shape[1])[None, :]] = ref_sorted[rows, ranks]
    return out


def synth_keyword_dataset(seed: int, count: int, n: int = 32, T: int = 64,
                          keyword_len: int = 16, snr: float = 2.0,
                          band: tuple[int, int] | None = None) -> Dataset:
    """Balanced keyword-detection set built from spectrogram-like noise.

    Class-1 samples get :func:`keyword_template` (scaled by ``snr``) added over
    ``keyword_len`` consecutive timepoints at a uniformly random start.  The
    mixed segment is then mapped, channel by channel, onto the original noise
    values of that segment by rank, so amplitudes inside and outside the
    keyword follow the same distribution and only the temporal and cross-
    channel arrangement differs.  Class-0 samples are noise only.
    """
    if keyword_len >= T or keyword_len < 1:
        raise ParameterError(f"keyword length must be in [1, T), got K={keyword_len}, T={T}")
    if count < 2 or count % 2:
        raise ParameterError(f"count must be even and at least 2, got {count}")
    rng = np.random.default_rng(seed)
    template = snr * keyword_template(n, keyword_len, band)
    labels = np.repeat([0, 1], count // 2)
    labels = labels[rng.permutation(count)]
    samples = []
    for i, label in enumerate(labels):
        x = smoothed_noise(rng, n, T)
        mask = np.zeros(T, dtype=bool)
        if label == 1:
            start = int(rng.integers(0, T - keyword_len + 1))
            seg = slice(start, start + keyword_len)
            x[:, seg] = _match_amplitudes(x[:, seg] + template, x[:, seg])
            mask[seg] = True
        samples.append(Sample(x, int(label), mask, sample_id(i)))
    note = f"keyword seed={seed} count={count} n={n} T={T} K={keyword_len} snr={snr}"
    return Dataset(samples, note=note)


# ---------------------------------------------------------------------------
# switching vector autoregression benchmark


@dataclass
class Regime:
    """Dynamics active from timepoint ``start`` (0-based) until the next regime."""

    start: int
    coefficients: np.ndarray

    @property
    def adjacency(self) -> np.ndarray:
        """``A[i, j] = 1`` when ``x_j(t)`` drives ``x_i(t+1)`` (edge ``j -> i``)."""
        return (self.coefficients != 0).astype(np.int8)

    def reversed(self) -> "Regime":
        return Regime(self.start, self.coefficients.T.copy())


@dataclass
class SwitchingVarSpec:
    n: int
    T: int
    regimes: list[Regime]
    sigma: float = 1.0
    rho_max: float = 0.95

    def validate(self) -> None:
        if not 0 < self.rho_max < 1:
            raise StabilityError(f"rho_max must be in (0, 1), got {self.rho_max}")
        if not self.regimes or self.regimes[0].start != 0:
            raise ParameterError("the first regime must start at t=0")
        starts = [r.start for r in self.regimes]
        if any(b <= a for a, b in zip(starts, starts[1:])) or starts[-1] >= self.T:
            raise ParameterError(f"regime starts must increase strictly inside [0, T): {starts}")
        for r in self.regimes:
            if r.coefficients.shape != (self.n, self.n):
                raise ParameterError(f"coefficients must be {self.n}x{self.n}")
            rho = float(np.abs(np.linalg.eigvals(r.coefficients)).max())
            if rho > self.rho_max:
                raise StabilityError(f"regime at t={r.start} has spectral radius {rho:.3f} > {self.rho_max}")

    def regime_index(self) -> np.ndarray:
        idx = np.zeros(self.T, dtype=np.int64)
        for k, r in enumerate(self.regimes):
            idx[r.start:] = k
        return idx

    def to_dict(self) -> dict:
        return {"n": self.n, "T": self.T, "sigma": self.sigma, "rho_max": self.rho_max,
                "regimes": [{"start": r.start, "coefficients": r.coefficients.tolist()}
                            for r in self.regimes]}

    @classmethod
    def from_dict(cls, d: dict) -> "SwitchingVarSpec":
        regimes = [Regime(int(r["start"]), np.array(r["coefficients"], dtype=float))
                   for r in d["regimes"]]
        return cls(int(d["n"]), int(d["T"]), regimes, float(d["sigma"]), float(d["rho_max"]))


def random_edges(rng: np.random.Generator, n: int, count: int,
                 forbidden: set[tuple[int, int]] = frozenset()) -> list[tuple[int, int]]:
    """``count`` directed (target, source) pairs with no pair in both directions."""
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges: list[tuple[int, int]] = []
    for k in rng.permutation(len(pairs)):
        i, j = pairs[k]
        if (i, j) in forbidden or (j, i) in edges:
            continue
        edges.append((i, j))
        if len(edges) == count:
            return edges
    raise ParameterError(f"cannot place {count} directed edges among {n} nodes")


def default_svar_spec(seed: int = 0, n: int = 6, T: int = 64, edges: int = 5,
                      weight: float = 0.7, sigma: float = 1.0) -> SwitchingVarSpec:
    """Two regimes (switching halfway) with ``edges`` directed edges each."""
    rng = np.random.default_rng(seed)
    regimes = []
    used: set[tuple[int, int]] = set()
    for start in (0, T // 2):
        C = np.zeros((n, n))
        for i, j in random_edges(rng, n, edges, used):
            C[i, j] = weight
            used.add((i, j))
        regimes.append(Regime(start, C))
    spec = SwitchingVarSpec(n, T, regimes, sigma)
    spec.validate()
    return spec


def class_regimes(spec: SwitchingVarSpec, label: int, reverse_regime: int = -1) -> list[Regime]:
    """Class 0 follows ``spec``; class 1 reverses every edge of one regime."""
    regimes = list(spec.regimes)
    if label == 1:
        k = reverse_regime % len(regimes)
        regimes[k] = regimes[k].reversed()
    return regimes


def true_adjacency(spec: SwitchingVarSpec, label: int, reverse_regime: int = -1) -> np.ndarray:
    """``(T, n, n)`` adjacency of the transition out of every timepoint."""
    idx = spec.regime_index()
    regimes = class_regimes(spec, label, reverse_regime)
    return np.stack([regimes[k].adjacency for k in idx])


def simulate_svar(spec: SwitchingVarSpec, rng: np.random.Generator,
                  regimes: list[Regime] | None = None) -> np.ndarray:
    """One ``(n, T)`` trajectory of ``x(t+1) = C(t) x(t) + sigma * noise``."""
    regimes = spec.regimes if regimes is None else regimes
    idx = spec.regime_index()
    x = np.empty((spec.n, spec.T))
    x[:, 0] = spec.sigma * rng.standard_normal(spec.n)
    for t in range(spec.T - 1):
        x[:, t + 1] = regimes[idx[t]].coefficients @ x[:, t] + spec.sigma * rng.standard_normal(spec.n)
    return x


def synth_svar_dataset(spec: SwitchingVarSpec, seed: int, count_per_class: int,
                       class_rule: str = "reverse", reverse_regime: int = -1) -> Dataset:
    """Switching-VAR trajectories for two classes that differ in edge direction.

    The returned dataset carries the per-class ground-truth adjacency in
    ``truth``.  Only the ``"reverse"`` class rule is implemented.
    """
    spec.validate()
    if class_rule != "reverse":
        raise ParameterError(f"unknown class rule {class_rule!r}")
    if count_per_class < 1:
        raise ParameterError("count_per_class must be positive")
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], count_per_class)
    labels = labels[rng.permutation(len(labels))]
    per_class = {c: class_regimes(spec, c, reverse_regime) for c in (0, 1)}
    samples = [Sample(simulate_svar(spec, rng, per_class[int(c)]), int(c), None, sample_id(i))
               for i, c in enumerate(labels)]
    truth = {c: true_adjacency(spec, c, reverse_regime) for c in (0, 1)}
    return Dataset(samples, note=f"svar seed={seed} per_class={count_per_class}", truth=truth)
