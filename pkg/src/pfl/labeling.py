"""Label generation for failure classification.

Two families of labeling rules turn a simulated tensile test into
per-time-step class labels:

* Load-curve rules key on features of the reaction force versus applied
  displacement: the force peak (``bin1``), the steepest smoothed descent
  of ``df/du`` (``bin2``), or the first post-peak decay through a fraction
  of the peak force (``bin3``).  ``multi3`` combines the 95% and 90%
  crossings into three classes: no failure (1), onset of failure (2),
  failure (3).
* The damage-threshold rule ``multi4`` bins every sensor's degradation
  value and takes a majority vote per time step, again over classes
  {1, 2, 3}.

``location9`` recodes multi-class labels of the three benchmark failure
cases into nine location-aware classes (case 1 -> 1..3, case 2 -> 4..6,
case 3 -> 7..9).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LabelingError
from .geometry import _atomic_write_text

__all__ = [
    "LoadCurve",
    "LabelVector",
    "compute_load_curve",
    "load_curve_csv",
    "label_binary",
    "label_multi3",
    "label_multi4",
    "label_location9",
    "transition_time",
    "write_labels",
    "read_labels",
    "DEFAULT_THRESHOLDS",
    "SLOPE_WINDOW",
]

# Degradation thresholds (R1, R2, R3) of the multi4 rule.
DEFAULT_THRESHOLDS = (1.0, 0.92, 0.85)

# Moving-average window for the df/du estimate of the bin2 rule.
SLOPE_WINDOW = 5


# =====================================================================
# Types
# =====================================================================

@dataclass
class LoadCurve:
    """Load-displacement curve of a tensile test."""

    t: np.ndarray
    u: np.ndarray
    f: np.ndarray

    def validate(self):
        if not (self.t.shape == self.u.shape == self.f.shape):
            raise DataError("load curve columns must have equal length")
        if self.u.size > 1 and np.any(np.diff(self.u) < 0.0):
            raise DataError("applied displacement must be non-decreasing")

    def __len__(self):
        return self.t.size


@dataclass
class LabelVector:
    """Per-time-step labels under one scheme.

    ``classes`` is the ordered class domain; ``meta`` carries scheme
    parameters (thresholds, window sizes, transition indices) for the
    sidecar metadata file.
    """

    scheme: str
    labels: np.ndarray
    classes: tuple
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def validate(self):
        domain = set(self.classes)
        if not set(np.unique(self.labels)).issubset(domain):
            raise DataError(f"labels outside class domain {self.classes}")

    def __len__(self):
        return self.labels.size


def compute_load_curve(record):
    """Load curve of a :class:`SimulationRecord`."""
    curve = LoadCurve(
        t=np.asarray(record.times, dtype=float),
        u=np.asarray(record.applied_disp, dtype=float),
        f=np.asarray(record.reaction_force, dtype=float),
    )
    curve.validate()
    return curve


def load_curve_csv(path):
    """Read a ``t,u,f`` CSV written by ``SimulationRecord.write_curve``."""
    with open(path) as f:
        header = f.readline().strip()
        if header.split(",") != ["t", "u", "f"]:
            raise DataError(f"{path}: expected header 't,u,f'")
        try:
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed row: {exc}") from exc
    if data.shape[1] != 3:
        raise DataError(f"{path}: expected three columns")
    curve = LoadCurve(t=data[:, 0], u=data[:, 1], f=data[:, 2])
    curve.validate()
    return curve


# =====================================================================
# Load-curve transitions
# =====================================================================

def _peak_index(curve):
    idx = int(np.argmax(curve.f))
    if idx == len(curve) - 1 or np.all(np.diff(curve.f) >= 0.0):
        raise LabelingError("no transition found: force has no interior peak")
    return idx


def _smoothed_slope(curve, window):
    # Edge-replicated padding keeps the moving average from fabricating
    # slope spikes at the curve ends.
    half = window // 2
    padded = np.pad(curve.f, (half, window - 1 - half), mode="edge")
    f = np.convolve(padded, np.ones(window) / window, mode="valid")
    du = np.gradient(curve.u)
    if np.any(du <= 0.0):
        # Guard duplicate displacement samples; slope undefined there.
        raise LabelingError("no transition found: displacement not strictly increasing")
    return np.gradient(f) / du


def _transition_index(curve, scheme):
    if scheme == "bin1":
        return _peak_index(curve)
    if scheme == "bin2":
        # The steepest-descent transition lives on the decaying branch;
        # searching from the peak keeps startup transients out of it.
        peak = _peak_index(curve)
        slope = _smoothed_slope(curve, SLOPE_WINDOW)[peak:]
        if np.all(slope >= 0.0):
            raise LabelingError("no transition found: df/du never negative")
        return peak + int(np.argmin(slope))
    if scheme.startswith("bin3"):
        fraction = _bin3_fraction(scheme)
        peak = _peak_index(curve)
        below = np.flatnonzero(curve.f[peak + 1 :] <= fraction * curve.f[peak])
        if below.size == 0:
            raise LabelingError(
                f"no transition found: force never decays below {fraction:g} of peak"
            )
        return peak + 1 + int(below[0])
    raise LabelingError(f"unknown labeling scheme {scheme!r}")


def _bin3_fraction(scheme):
    parts = scheme.split(":")
    if len(parts) == 1:
        return 0.90
    try:
        pct = float(parts[1])
    except ValueError as exc:
        raise LabelingError(f"malformed scheme {scheme!r}") from exc
    if not (0.0 < pct < 100.0):
        raise LabelingError(f"bin3 percentage out of range in {scheme!r}")
    return pct / 100.0


def transition_time(curve, scheme):
    """Time at which a binary scheme's label switches from 0 to 1."""
    return float(curve.t[_transition_index(curve, scheme)])


# =====================================================================
# Labeling rules
# =====================================================================

def label_binary(curve, scheme):
    """Binary labels: 0 before the scheme's transition, 1 from it on.

    ``scheme`` is ``"bin1"`` (force peak), ``"bin2"`` (steepest smoothed
    df/du), or ``"bin3:<percent>"`` (first post-peak decay through the
    given percentage of peak force; bare ``"bin3"`` means 90).
    """
    curve.validate()
    idx = _transition_index(curve, scheme)
    labels = np.zeros(len(curve), dtype=np.int64)
    labels[idx:] = 1
    return LabelVector(
        scheme=scheme,
        labels=labels,
        classes=(0, 1),
        times=curve.t.copy(),
        meta={"transition_index": idx, "transition_time": float(curve.t[idx])},
    )


def label_multi3(curve):
    """Three classes from the 95% and 90% post-peak force crossings.

    Class 1 before the 95% crossing, class 2 from there until the 90%
    crossing, class 3 after.  The 95% crossing necessarily comes first on
    the decaying branch.
    """
    curve.validate()
    i95 = _transition_index(curve, "bin3:95")
    i90 = _transition_index(curve, "bin3:90")
    labels = np.ones(len(curve), dtype=np.int64)
    labels[i95:] = 2
    labels[i90:] = 3
    return LabelVector(
        scheme="multi3",
        labels=labels,
        classes=(1, 2, 3),
        times=curve.t.copy(),
        meta={
            "transition_index_95": i95,
            "transition_index_90": i90,
            "transition_time_95": float(curve.t[i95]),
            "transition_time_90": float(curve.t[i90]),
        },
    )


def label_multi4(patterns, thresholds=DEFAULT_THRESHOLDS):
    """Three classes from per-sensor degradation thresholds, majority vote.

    Per row, a sensor counts toward class 1 while its degradation exceeds
    ``R2``, class 2 in ``(R3, R2]``, class 3 at or below ``R3``.  The row's
    class is the most common count; ties break toward the more severe
    class.
    """
    r1, r2, r3 = thresholds
    if not (r1 > r2 > r3):
        raise LabelingError(f"thresholds must decrease, got {thresholds!r}")
    g = np.asarray(patterns.values, dtype=float)
    counts = np.stack(
        [
            np.sum((g > r2) & (g <= r1), axis=1),
            np.sum((g > r3) & (g <= r2), axis=1),
            np.sum(g <= r3, axis=1),
        ],
        axis=1,
    )
    # argmax on the reversed count order returns the most severe class on
    # ties; map back to class ids 1..3.  Rows whose sensors all sit above
    # R1 (possible only for out-of-range degradation values) count as
    # intact.
    labels = 3 - np.argmax(counts[:, ::-1], axis=1).astype(np.int64)
    labels[counts.sum(axis=1) == 0] = 1
    return LabelVector(
        scheme="multi4",
        labels=labels,
        classes=(1, 2, 3),
        times=np.asarray(patterns.times, dtype=float).copy(),
        meta={"thresholds": list(thresholds)},
    )


def label_location9(per_case_labels):
    """Nine location classes from per-case three-class labels.

    ``per_case_labels`` is an iterable of ``(case_id, LabelVector)`` with
    case ids 1..3 and three-class labels (multi4 style; the ordinal
    encodings {1, 2, 3} and {0, 0.5, 1} are both accepted).  Rows are
    concatenated in the given case order; case c's classes map to
    ``3*(c-1) + {1, 2, 3}``.
    """
    blocks = []
    time_blocks = []
    for case_id, lv in per_case_labels:
        if case_id not in (1, 2, 3):
            raise LabelingError(f"location labels need cases 1..3, got {case_id!r}")
        raw = np.asarray(lv.labels, dtype=float)
        if set(np.unique(raw)).issubset({0.0, 0.5, 1.0}):
            ordinal = (2.0 * raw + 1.0).astype(np.int64)
        else:
            ordinal = raw.astype(np.int64)
        if not set(np.unique(ordinal)).issubset({1, 2, 3}):
            raise LabelingError(f"case {case_id}: labels are not three-class")
        blocks.append(3 * (case_id - 1) + ordinal)
        time_blocks.append(lv.times if lv.times is not None else np.arange(len(lv), dtype=float))
    if not blocks:
        raise LabelingError("no case labels given")
    return LabelVector(
        scheme="location9",
        labels=np.concatenate(blocks),
        classes=tuple(range(1, 10)),
        times=np.concatenate(time_blocks),
        meta={"case_order": [c for c, _ in per_case_labels]},
    )


# =====================================================================
# Exchange format
# =====================================================================

def write_labels(lv, path, sidecar_path=None):
    """Write ``t,label`` CSV plus a JSON sidecar with scheme metadata."""
    times = lv.times if lv.times is not None else np.arange(len(lv), dtype=float)
    lines = ["t,label"]
    for t, lab in zip(times, lv.labels):
        lines.append(f"{t:.17g},{lab}")
    _atomic_write_text(path, "\n".join(lines) + "\n")
    if sidecar_path is None:
        sidecar_path = str(path) + ".json"
    meta = {
        "scheme": lv.scheme,
        "classes": [int(c) for c in lv.classes],
        "n_labels": int(len(lv)),
    }
    meta.update(lv.meta)
    _atomic_write_text(sidecar_path, json.dumps(meta, indent=2) + "\n")


def read_labels(path, sidecar_path=None):
    """Read a label CSV (+ sidecar if present) back into a LabelVector."""
    import os

    with open(path) as f:
        header = f.readline().strip()
        if header.split(",") != ["t", "label"]:
            raise DataError(f"{path}: expected header 't,label'")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise DataError(f"{path}: expected two columns")
    if sidecar_path is None:
        sidecar_path = str(path) + ".json"
    scheme = "unknown"
    classes = None
    meta = {}
    if os.path.exists(sidecar_path):
        with open(sidecar_path) as f:
            meta = json.load(f)
        scheme = meta.pop("scheme", "unknown")
        if "classes" in meta:
            classes = tuple(meta.pop("classes"))
        meta.pop("n_labels", None)
    labels = data[:, 1].astype(np.int64)
    if classes is None:
        classes = tuple(int(c) for c in np.unique(labels))
    lv = LabelVector(scheme=scheme, labels=labels, classes=classes, times=data[:, 0], meta=meta)
    lv.validate()
    return lv
