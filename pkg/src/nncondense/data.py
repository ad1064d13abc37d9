"""Clinical time-series preprocessing and a synthetic cohort generator.

The pipeline turns irregular long-format observations into fixed
``(T, F)`` matrices: regular binning keeping the last reading per bin,
forward-fill imputation with a per-variable normal value as fallback,
one-hot encoding of categorical variables, z-scoring of continuous ones
with training-split statistics, and one observed/imputed mask column per
variable appended at the end.
"""

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DataError
from .tensor_core import FLOAT, Rng

log = logging.getLogger(__name__)

DEFAULT_SPEC = "mimic76.csv"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple = ()
    normal_value: object = 0.0

    def __post_init__(self):
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise DataError(f"{self.name}: categorical variables need at least 2 levels")
            if self.normal_value not in self.levels:
                raise DataError(f"{self.name}: normal value {self.normal_value!r} is not a level")
        elif self.kind == "continuous":
            if not math.isfinite(self.normal_value):
                raise DataError(f"{self.name}: normal value must be finite")
        else:
            raise DataError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def width(self):
        return len(self.levels) if self.kind == "categorical" else 1

    def parse(self, raw):
        if self.kind == "continuous":
            try:
                value = float(raw)
            except ValueError:
                raise DataError(f"{self.name}: cannot parse {raw!r} as a number") from None
            if not math.isfinite(value):
                raise DataError(f"{self.name}: non-finite value {raw!r}")
            return value
        raw = str(raw)
        if raw not in self.levels:
            raise DataError(f"{self.name}: unknown level {raw!r}")
        return raw


def parse_variable_specs(text):
    """Read ``name,kind,levels,normal_value`` lines (``#`` starts a comment)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    specs = []
    for row in reader:
        if row == ["name", "kind", "levels", "normal_value"]:
            continue
        if len(row) != 4:
            raise DataError(f"variable spec line needs 4 fields: {row}")
        name, kind, levels, normal = (f.strip() for f in row)
        if kind == "categorical":
            specs.append(VariableSpec(name, kind, tuple(levels.split("|")), normal))
        else:
            try:
                specs.append(VariableSpec(name, kind, (), float(normal)))
            except ValueError:
                raise DataError(f"{name}: bad normal value {normal!r}") from None
    if not specs:
        raise DataError("variable spec file lists no variables")
    if len({s.name for s in specs}) != len(specs):
        raise DataError("duplicate variable names in spec file")
    return specs


def load_variable_specs(path=None):
    if path is None:
        text = resources.files("nncondense").joinpath("data", DEFAULT_SPEC).read_text("utf-8")
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read variable spec {path}: {exc}") from exc
    return parse_variable_specs(text)


@dataclass
class EpisodeRecord:
    sample_id: str
    label: int
    observations: list = field(default_factory=list)


# ------------------------------------------------------------- CSV ingestion


def write_episodes_csv(episodes):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "time_hours", "variable", "value"])
    for ep in episodes:
        for t, var, value in ep.observations:
            w.writerow([ep.sample_id, f"{t:.3f}", var, value if isinstance(value, str) else f"{value:.4f}"])
    return buf.getvalue()


def write_labels_csv(episodes):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label"])
    for ep in episodes:
        w.writerow([ep.sample_id, ep.label])
    return buf.getvalue()


def read_episodes_csv(text, labels_text, specs):
    """Parse long-format observations plus a ``sample_id,label`` table.

    Records with a negative time are rejected as a :class:`DataError`;
    samples without any observation still appear if they carry a label.
    """
    by_name = {s.name: s for s in specs}
    labels = {}
    for row in csv.DictReader(io.StringIO(labels_text)):
        try:
            label = int(row["label"])
        except (KeyError, ValueError):
            raise DataError(f"bad label row {row}") from None
        if label not in (0, 1):
            raise DataError(f"label for {row['sample_id']} must be 0 or 1")
        labels[row["sample_id"]] = label
    episodes = {sid: EpisodeRecord(sid, lab) for sid, lab in labels.items()}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["sample_id", "time_hours", "variable", "value"]:
        raise DataError(f"unexpected CSV header {reader.fieldnames}")
    for row in reader:
        sid = row["sample_id"]
        if sid not in episodes:
            raise DataError(f"sample {sid} has no label")
        spec = by_name.get(row["variable"])
        if spec is None:
            raise DataError(f"unknown variable {row['variable']!r}")
        try:
            t = float(row["time_hours"])
        except ValueError:
            raise DataError(f"bad time {row['time_hours']!r}") from None
        if not t >= 0:
            raise DataError(f"sample {sid}: negative observation time {t}")
        episodes[sid].observations.append((t, spec.name, spec.parse(row["value"])))
    return list(episodes.values())


# ------------------------------------------------------- per-sample steps


def resample(episode, specs, interval=1.0, horizon=48.0):
    """Bin observations into ``horizon / interval`` half-open bins.

    Returns ``{variable: list}`` where each entry is the last reading in
    ``[k * interval, (k + 1) * interval)`` or ``None`` for an empty bin.
    Readings at or beyond ``horizon`` are dropped.
    """
    n_bins = round(horizon / interval)
    if n_bins <= 0 or not math.isclose(n_bins * interval, horizon):
        raise DataError(f"interval {interval} does not divide horizon {horizon}")
    names = {s.name for s in specs}
    bins = {s.name: [None] * n_bins for s in specs}
    latest = {}
    for order, (t, var, value) in enumerate(episode.observations):
        if t < 0:
            raise DataError(f"sample {episode.sample_id}: negative observation time {t}")
        if var not in names:
            raise DataError(f"sample {episode.sample_id}: unknown variable {var!r}")
        if t >= horizon:
            continue
        k = min(int(t // interval), n_bins - 1)
        key = (var, k)
        # later time wins; equal times fall back to file order
        if key not in latest or (t, order) >= latest[key]:
            latest[key] = (t, order)
            bins[var][k] = value
    return bins


def impute(values, spec):
    """Forward fill, falling back to the variable's normal value.

    Returns ``(filled, mask)`` with ``mask[k] == 1`` iff bin ``k`` held a
    real measurement.
    """
    filled = []
    mask = np.zeros(len(values), dtype=np.uint8)
    current = spec.normal_value
    for k, v in enumerate(values):
        if v is not None:
            current = v
            mask[k] = 1
        filled.append(current)
    return filled, mask


class FeatureLayout:
    """Column layout: encoded values for every variable, then one mask each."""

    def __init__(self, specs):
        self.specs = list(specs)
        self.value_slices = {}
        self.names = []
        col = 0
        for s in self.specs:
            self.value_slices[s.name] = slice(col, col + s.width)
            if s.kind == "categorical":
                self.names += [f"{s.name}->{lev}" for lev in s.levels]
            else:
                self.names.append(s.name)
            col += s.width
        self.mask_cols = {}
        for s in self.specs:
            self.mask_cols[s.name] = col
            self.names.append(f"mask->{s.name}")
            col += 1
        self.width = col
        self.continuous = np.array([s.kind == "continuous" for s in self.specs
                                    for _ in range(s.width)] + [False] * len(self.specs))

    def encode_value(self, spec, value):
        if spec.kind == "categorical":
            row = np.zeros(spec.width)
            row[spec.levels.index(value)] = 1.0
            return row
        return np.array([value], dtype=np.float64)


def encode_episode(episode, layout, interval=1.0, horizon=48.0):
    """Unnormalized ``(T, F)`` float64 matrix for one episode."""
    bins = resample(episode, layout.specs, interval, horizon)
    n_bins = len(next(iter(bins.values())))
    x = np.zeros((n_bins, layout.width))
    for s in layout.specs:
        filled, mask = impute(bins[s.name], s)
        sl = layout.value_slices[s.name]
        if s.kind == "categorical":
            idx = [s.levels.index(v) for v in filled]
            x[np.arange(n_bins), sl.start + np.array(idx)] = 1.0
        else:
            x[:, sl.start] = filled
        x[:, layout.mask_cols[s.name]] = mask
    return x


@dataclass
class NormStats:
    names: list
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return ((x - self.mean) / self.std).astype(FLOAT)

    def to_csv(self):
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "mean", "std"])
        for n, m, s in zip(self.names, self.mean, self.std):
            w.writerow([n, repr(float(m)), repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([r["feature"] for r in rows], np.array([float(r["mean"]) for r in rows]),
                   np.array([float(r["std"]) for r in rows]))


def fit_stats(matrices, layout):
    """Per-column mean/std of continuous columns over stacked training bins.

    Non-continuous columns get mean 0 and std 1 (left unchanged).  A column
    with zero variance gets std 1 and a warning.
    """
    stacked = np.concatenate([m for m in matrices], axis=0)
    mean = np.where(layout.continuous, stacked.mean(axis=0), 0.0)
    std = np.where(layout.continuous, stacked.std(axis=0), 1.0)
    for k in np.flatnonzero(layout.continuous & (std == 0)):
        log.warning("feature %r has zero variance; std clamped to 1", layout.names[k])
        std[k] = 1.0
    return NormStats(list(layout.names), mean, std)


def static_features(x, layout, stats):
    """Collapse normalized ``(..., T, F)`` matrices to ``(..., F)``.

    Value columns become the mean over bins where the variable was
    observed (the normalized normal value if never observed); mask columns
    become the observed fraction.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[:-2] + (layout.width,))
    for s in layout.specs:
        sl = layout.value_slices[s.name]
        m = x[..., layout.mask_cols[s.name]]
        count = m.sum(axis=-1)
        summed = np.einsum("...t,...tf->...f", m, x[..., sl])
        normal = (layout.encode_value(s, s.normal_value) - stats.mean[sl]) / stats.std[sl]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = summed / count[..., None]
        out[..., sl] = np.where(count[..., None] > 0, mean, normal)
        out[..., layout.mask_cols[s.name]] = m.mean(axis=-1)
    return out.astype(FLOAT)


# ------------------------------------------------------------------ cohort


def split_is_test(sample_id, seed=0, test_fraction=0.15):
    digest = hashlib.blake2b(f"{seed}:{sample_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2 ** 64 < test_fraction


@dataclass
class FeatureSet:
    x: np.ndarray
    static: np.ndarray
    y: np.ndarray
    ids: list


@dataclass
class Cohort:
    train: FeatureSet
    test: FeatureSet
    stats: NormStats
    layout: FeatureLayout


def preprocess(episodes, specs, seed=0, test_fraction=0.15, interval=1.0, horizon=48.0):
    """Full pipeline from episodes to normalized train/test feature sets."""
    layout = FeatureLayout(specs)
    episodes = sorted(episodes, key=lambda e: e.sample_id)
    if not episodes:
        raise DataError("no episodes")
    raw = {e.sample_id: encode_episode(e, layout, interval, horizon) for e in episodes}
    is_test = {e.sample_id: split_is_test(e.sample_id, seed, test_fraction) for e in episodes}
    train_ids = [e.sample_id for e in episodes if not is_test[e.sample_id]]
    if not train_ids:
        raise DataError("training split is empty")
    stats = fit_stats([raw[i] for i in train_ids], layout)
    labels = {e.sample_id: e.label for e in episodes}

    def build(ids):
        if not ids:
            x = np.zeros((0, round(horizon / interval), layout.width), FLOAT)
        else:
            x = np.stack([stats.apply(raw[i]) for i in ids])
        return FeatureSet(x, static_features(x, layout, stats), np.array([labels[i] for i in ids], FLOAT), ids)

    test_ids = [e.sample_id for e in episodes if is_test[e.sample_id]]
    return Cohort(build(train_ids), build(test_ids), stats, layout)


# --------------------------------------------------------------- synthetic

# continuous variable -> (between-patient spread, measurement noise, risk effect)
_PROFILE = {
    "Diastolic blood pressure": (8.0, 5.0, -6.0),
    "Fraction inspired oxygen": (0.05, 0.03, 0.08),
    "Glucose": (20.0, 15.0, 12.0),
    "Heart Rate": (10.0, 6.0, 9.0),
    "Height": (10.0, 0.5, 0.0),
    "Mean blood pressure": (8.0, 5.0, -7.0),
    "Oxygen saturation": (1.5, 1.0, -1.8),
    "Respiratory rate": (3.0, 2.0, 3.0),
    "Systolic blood pressure": (12.0, 8.0, -10.0),
    "Temperature": (0.4, 0.3, 0.35),
    "Weight": (15.0, 0.5, 0.0),
    "pH": (0.04, 0.03, -0.05),
}


@dataclass
class SyntheticCohort:
    episodes: list
    risk: np.ndarray


def generate_synthetic(n, seed=0, specs=None, positive_rate=0.11, horizon=48, separation=2.5):
    """Label-dependent synthetic ICU stays.

    Each sample draws a label with probability ``positive_rate`` and a
    latent risk ``z ~ N(separation * label, 1)``.  Continuous variables
    drift with ``z`` over the stay; categorical ones leave their normal
    level more often as ``z`` grows.  Every variable misses 30-70% of the
    hourly bins.  The latent risk comes back alongside the episodes.
    """
    if n < 2:
        raise DataError("need at least 2 samples")
    specs = specs if specs is not None else load_variable_specs()
    rng = Rng(seed).stream("synthetic")
    width = len(str(n - 1))
    episodes, risks = [], np.empty(n)
    for s_idx in range(n):
        label = int(rng.random() < positive_rate)
        z = rng.generator.normal(separation * label, 1.0)
        risks[s_idx] = z
        obs = []
        for spec in specs:
            miss = rng.generator.uniform(0.3, 0.7)
            seen = rng.random(horizon) >= miss
            times = np.arange(horizon) + rng.random(horizon)
            if spec.kind == "continuous":
                spread, noise, effect = _PROFILE.get(
                    spec.name, (0.1 * max(abs(spec.normal_value), 1.0), 0.05 * max(abs(spec.normal_value), 1.0),
                                0.1 * max(abs(spec.normal_value), 1.0)))
                base = spec.normal_value + rng.generator.normal(0, spread)
                ramp = 0.3 + 0.7 * times / horizon
                vals = base + effect * z * ramp + rng.generator.normal(0, noise, horizon)
                obs += [(float(t), spec.name, float(v)) for t, v, k in zip(times, vals, seen) if k]
            else:
                others = [lev for lev in spec.levels if lev != spec.normal_value]
                p_off = 1 / (1 + np.exp(-(1.2 * z * (0.5 + times / horizon) - 2.5)))
                off = rng.random(horizon) < p_off
                picks = rng.integers(0, len(others), horizon)
                obs += [(float(t), spec.name, others[pk] if o else spec.normal_value)
                        for t, o, pk, k in zip(times, off, picks, seen) if k]
        obs.sort(key=lambda r: r[0])
        episodes.append(EpisodeRecord(str(s_idx).zfill(width), label, obs))
    return SyntheticCohort(episodes, risks)
