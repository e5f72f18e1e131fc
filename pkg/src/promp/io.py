"""Reading and writing demonstrations and models, phase normalisation and
strike segmentation."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .errors import DimensionError, InputError, ParseError, SegmentationError
from .model import Demonstration, ProMP

MIN_SEGMENTS = 6


# ---------------------------------------------------------------------------
# Demonstrations


def _demo_from_record(rec, where):
    try:
        t = np.asarray(rec["t"], dtype=float)
        q = np.asarray(rec["q"], dtype=float)
    except KeyError as exc:
        raise ParseError(f"{where}: demonstration lacks field {exc}") from None
    except ValueError:
        raise DimensionError(f"{where}: ragged or non-numeric samples") from None
    if q.ndim == 1:
        q = q[:, None]
    return Demonstration(t, q, rec.get("t0"), rec.get("T"))


def _load_json(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    if isinstance(doc, dict):
        doc = doc.get("demos", [doc])
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a list of demonstrations")
    return [_demo_from_record(r, f"{path}[{i}]") for i, r in enumerate(doc)]


def _load_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file", 1, 1)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t" or any(h != f"q{i}" for i, h in enumerate(header[1:])):
        raise ParseError(f"{path}: header must be t,q0,...,q<D-1>", 1, 1)
    width = len(header)
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DimensionError(f"{path} line {ln}: {len(row)} columns, expected {width}")
        vals = []
        col = 1
        for c in row:
            try:
                vals.append(float(c))
            except ValueError:
                raise ParseError(f"{path}: cannot read {c!r} as a number", ln, col) from None
            col += len(c) + 1
        data.append(vals)
    if not data:
        raise ParseError(f"{path}: no samples", 2, 1)
    a = np.array(data)
    return [Demonstration(a[:, 0], a[:, 1:])]


def load_demos(path) -> List[Demonstration]:
    """Load a JSON document, a CSV file, or a directory of such files."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} does not exist")
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".csv", ".json"))
        if not files:
            raise InputError(f"{path} contains no .csv or .json demonstrations")
        demos = [d for f in files for d in load_demos(f)]
    elif path.suffix.lower() == ".csv":
        demos = _load_csv(path)
    else:
        demos = _load_json(path)
    if not demos:
        raise InputError(f"{path} holds no demonstrations")
    D = demos[0].D
    for i, d in enumerate(demos):
        if d.D != D:
            raise DimensionError(f"demonstration {i} has D={d.D}, expected D={D}")
    return demos


def demos_to_json(demos) -> list:
    return [{"id": i, "t": d.times.tolist(), "q": d.joints.tolist(), "t0": d.t0, "T": d.T}
            for i, d in enumerate(demos)]


def save_demos(demos, path):
    """JSON for a ``.json`` path, otherwise one ``demo_XXX.csv`` per demonstration in a directory."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(demos_to_json(demos)))
        return [path]
    path.mkdir(parents=True, exist_ok=True)
    out = []
    for i, d in enumerate(demos):
        f = path / f"demo_{i:03d}.csv"
        with open(f, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"q{j}" for j in range(d.D)])
            for t, q in zip(d.times, d.joints):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in q])
        out.append(f)
    return out


def normalize_phase(demo: Demonstration) -> np.ndarray:
    """``z = (t - t0) / T``."""
    if not demo.T > 0:
        raise InputError("zero-duration demonstration")
    return (demo.times - demo.t0) / demo.T


# ---------------------------------------------------------------------------
# Models


def save_model(p: ProMP, path):
    Path(path).write_text(json.dumps(p.to_dict()))


def load_model(path) -> ProMP:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    return ProMP.from_dict(doc)


# ---------------------------------------------------------------------------
# Segmentation


@dataclass
class SegmentReport:
    segments: List[Demonstration] = field(default_factory=list)
    hit_times: List[float] = field(default_factory=list)
    dropped: List[tuple] = field(default_factory=list)   # (hit time, reason)


def joint_speed(demo: Demonstration, smooth=1) -> np.ndarray:
    """Norm of central-difference joint velocities (one-sided at the ends)."""
    if demo.n_samples < 2:
        raise InputError("need at least two samples to estimate velocities")
    v = np.gradient(demo.joints, demo.times, axis=0)
    if smooth > 1:
        k = np.ones(int(smooth)) / int(smooth)
        v = np.stack([np.convolve(v[:, j], k, mode="same") for j in range(v.shape[1])], 1)
    return np.linalg.norm(v, axis=1)


def segment_strikes(demo: Demonstration, hit_times: Sequence[float], threshold=0.01,
                    smooth=1) -> SegmentReport:
    """Cut one segment per hit time between the nearest near-zero-speed samples.

    A sample counts as "zero velocity" when its speed is below ``threshold``
    times the peak speed of the demonstration.
    """
    speed = joint_speed(demo, smooth)
    still = speed < threshold * speed.max()
    t = demo.times
    rep = SegmentReport()
    last_end = -np.inf
    for th in sorted(float(h) for h in hit_times):
        if not t[0] <= th <= t[-1]:
            rep.dropped.append((th, "outside demonstration"))
            continue
        before = np.flatnonzero(still & (t < th))
        after = np.flatnonzero(still & (t > th))
        if before.size == 0 or after.size == 0:
            rep.dropped.append((th, "no zero-velocity bracket"))
            continue
        a, b = before[-1], after[0]
        if t[a] < last_end:
            rep.dropped.append((th, "bracket overlaps previous segment"))
            continue
        if b - a < 2:
            rep.dropped.append((th, "segment too short"))
            continue
        rep.segments.append(Demonstration(t[a:b + 1], demo.joints[a:b + 1]))
        rep.hit_times.append(th)
        last_end = t[b]
    return rep


def segment_training_set(demos, hit_times, minimum=MIN_SEGMENTS, **kw) -> SegmentReport:
    """Segment every demo and refuse training sets with too few strikes."""
    if len(demos) != len(hit_times):
        raise InputError("need one list of hit times per demonstration")
    total = SegmentReport()
    for d, h in zip(demos, hit_times):
        r = segment_strikes(d, h, **kw)
        total.segments += r.segments
        total.hit_times += r.hit_times
        total.dropped += r.dropped
    if len(total.segments) < minimum:
        raise SegmentationError(
            f"only {len(total.segments)} strikes could be segmented, at least {minimum} are "
            "needed; record more demonstrations and retry")
    return total
