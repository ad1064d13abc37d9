"""AUROC, latency benchmarking and the comparison report."""

import csv
import io
import statistics
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from ._io import atomic_write
from .errors import DataError
from .layers import predict
from .training import EpochLog


def auroc(scores, labels):
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores receive their average rank, which counts each tied
    positive/negative pair as one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores but {labels.size} labels")
    pos = labels == 1
    if not np.all(pos | (labels == 0)):
        raise DataError("labels must be 0 or 1")
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC is undefined with a single class")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _score(model, x, batch_size):
    if hasattr(model, "predict"):
        return model.predict(x, batch_size)
    return predict(model, x, batch_size)


def bench_inference(model, x, repetitions=5, batch_size=None):
    """Median wall-clock microseconds per sample for scoring ``x``.

    One untimed warm-up pass runs first.  Each repetition scores the whole
    dataset; the per-sample time of each repetition enters the median.
    """
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    n = len(x)
    if n == 0:
        raise DataError("cannot benchmark on an empty dataset")
    _score(model, x, batch_size)
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        _score(model, x, batch_size)
        times.append((time.perf_counter() - start) / n * 1e6)
    return statistics.median(times)


@dataclass
class EvalReport:
    model: str
    params: int
    file_bytes: int
    quantized_bytes: Optional[int] = None
    inference_us: Optional[float] = None
    test_auroc: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.test_auroc is not None and not 0 <= self.test_auroc <= 1:
            raise ValueError("test_auroc must lie in [0, 1]")


REPORT_COLUMNS = [f.name for f in fields(EvalReport)]
EPOCH_COLUMNS = ["epoch", "loss", "test_auroc"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header, rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def reports_to_csv(reports):
    return _csv(REPORT_COLUMNS, [[getattr(r, c) for c in REPORT_COLUMNS] for r in reports])


def reports_from_csv(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(EvalReport(
            model=row["model"],
            params=int(row["params"]),
            file_bytes=int(row["file_bytes"]),
            quantized_bytes=int(row["quantized_bytes"]) if row["quantized_bytes"] else None,
            inference_us=float(row["inference_us"]) if row["inference_us"] else None,
            test_auroc=float(row["test_auroc"]) if row["test_auroc"] else None,
        ))
    return out


def epochs_to_csv(logs, with_seconds=False):
    header = EPOCH_COLUMNS + (["seconds"] if with_seconds else [])
    rows = [[e.epoch, e.loss, e.test_auroc] + ([e.seconds] if with_seconds else []) for e in logs]
    return _csv(header, rows)


def epochs_from_csv(text):
    return [EpochLog(int(r["epoch"]), float(r["loss"]), float(r["test_auroc"]), float(r.get("seconds") or 0.0))
            for r in csv.DictReader(io.StringIO(text))]


# --------------------------------------------------------------------- SVG

_PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"]


def _bars(x0, y0, w, h, title, names, values, fmt):
    parts = [f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8:.1f}" text-anchor="middle" font-size="13">{title}</text>',
             f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="#333"/>']
    vals = [v if v is not None else 0.0 for v in values]
    top = max(vals, default=0) or 1.0
    slot = w / max(len(names), 1)
    for k, (name, v) in enumerate(zip(names, vals)):
        bh = h * v / top
        bx = x0 + k * slot + slot * 0.15
        parts.append(f'<rect x="{bx:.1f}" y="{y0 + h - bh:.1f}" width="{slot * 0.7:.1f}" height="{bh:.1f}" '
                     f'fill="{_PALETTE[k % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{bx + slot * 0.35:.1f}" y="{y0 + h - bh - 3:.1f}" text-anchor="middle" '
                     f'font-size="10">{fmt(v)}</text>')
        parts.append(f'<text x="{bx + slot * 0.35:.1f}" y="{y0 + h + 14:.1f}" text-anchor="middle" '
                     f'font-size="10">{_escape(name)}</text>')
    return parts


def _curves(x0, y0, w, h, curves):
    parts = [f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8:.1f}" text-anchor="middle" font-size="13">'
             'Test AUROC by epoch</text>',
             f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>']
    pts = [(e.epoch, e.test_auroc) for logs in curves.values() for e in logs if np.isfinite(e.test_auroc)]
    if not pts:
        return parts
    emax = max(p[0] for p in pts)
    lo = min(p[1] for p in pts)
    hi = max(p[1] for p in pts)
    span = (hi - lo) or 1.0

    def xy(epoch, val):
        return x0 + w * (epoch - 1) / max(emax - 1, 1), y0 + h - h * (val - lo) / span

    parts.append(f'<text x="{x0 - 4}" y="{y0 + 4}" text-anchor="end" font-size="10">{hi:.3f}</text>')
    parts.append(f'<text x="{x0 - 4}" y="{y0 + h}" text-anchor="end" font-size="10">{lo:.3f}</text>')
    for k, (name, logs) in enumerate(curves.items()):
        color = _PALETTE[k % len(_PALETTE)]
        coords = [xy(e.epoch, e.test_auroc) for e in logs if np.isfinite(e.test_auroc)]
        if coords:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in coords)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x0 + w + 8}" y="{y0 + 14 * (k + 1)}" font-size="10" fill="{color}">'
                     f'{_escape(name)}</text>')
    return parts


def _escape(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(reports, epoch_logs=None):
    """Self-contained SVG with accuracy, size and latency bars plus AUROC curves."""
    names = [r.model for r in reports]
    size_kb = [(r.quantized_bytes if r.quantized_bytes is not None else r.file_bytes) / 1024 for r in reports]
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="960" height="640" font-family="sans-serif">',
        '<rect width="960" height="640" fill="white"/>',
    ]
    parts += _bars(50, 40, 260, 200, "Test AUROC", names, [r.test_auroc for r in reports],
                   lambda v: f"{v:.3f}")
    parts += _bars(360, 40, 260, 200, "File size [KB]", names, size_kb, lambda v: f"{v:.1f}")
    parts += _bars(670, 40, 260, 200, "Inference [us/sample]", names, [r.inference_us for r in reports],
                   lambda v: f"{v:.1f}")
    parts += _curves(80, 340, 700, 240, epoch_logs or {})
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(reports, epoch_logs, out_dir):
    """Write ``eval.csv``, one ``epochs_<model>.csv`` per model and ``report.svg``.

    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    written = [out_dir / "eval.csv"]
    atomic_write(written[0], reports_to_csv(reports))
    for name, logs in (epoch_logs or {}).items():
        path = out_dir / f"epochs_{name}.csv"
        atomic_write(path, epochs_to_csv(logs))
        written.append(path)
    path = out_dir / "report.svg"
    atomic_write(path, render_svg(reports, epoch_logs))
    written.append(path)
    return written
