"""Pattern extraction: sensor damage histories to feature matrices.

A pattern is one time step's vector of degradation values ``g(phi) =
(1 - phi)^2`` across all sensors; stacking the recorded steps gives the
``m x n`` pattern matrix consumed by the classifiers.  Raw damage ``phi``
is what gets persisted (``series.csv``): noise studies corrupt ``phi``
directly, so ``g`` is always recomputed from ``phi`` on load.
"""

from dataclasses import dataclass

import numpy as np

from .constitutive import degradation
from .errors import DataError
from .geometry import _atomic_write_text

__all__ = [
    "TimeSeriesMatrix",
    "extract_patterns",
    "load_series",
    "patterns_from_phi",
    "write_patterns",
    "read_patterns",
]


@dataclass
class TimeSeriesMatrix:
    """Pattern matrix: rows = time steps, columns = sensors, entries = g(phi).

    On clean data entries stay within [0, 1] up to the small damage
    overshoot the penalty branches allow; noisy entries may exceed the
    range unless clipped by the consumer.
    """

    values: np.ndarray
    times: np.ndarray
    sensor_ids: np.ndarray
    case_id: int | None = None

    def validate(self):
        if self.values.ndim != 2:
            raise DataError("pattern matrix must be 2-d")
        m, n = self.values.shape
        if self.times.shape != (m,) or self.sensor_ids.shape != (n,):
            raise DataError("pattern matrix axes do not match times/sensor_ids")
        if not np.all(np.isfinite(self.values)):
            raise DataError("pattern matrix contains non-finite entries")

    @property
    def n_patterns(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]


def patterns_from_phi(phi_values, times, sensor_ids, case_id=None):
    """Build a :class:`TimeSeriesMatrix` from raw damage values."""
    tsm = TimeSeriesMatrix(
        values=degradation(np.asarray(phi_values, dtype=float)),
        times=np.asarray(times, dtype=float),
        sensor_ids=np.asarray(sensor_ids, dtype=np.int64),
        case_id=case_id,
    )
    tsm.validate()
    return tsm


def extract_patterns(record, sensors=None):
    """Pattern matrix of a simulation record.

    Parameters
    ----------
    record : SimulationRecord
    sensors : SensorSet, optional
        Subset/reordering of the record's sensors; defaults to the
        record's own sensor order.

    Returns
    -------
    TimeSeriesMatrix
    """
    if sensors is None:
        ids = np.asarray(record.sensor_ids, dtype=np.int64)
        phi = record.sensor_phi
    else:
        ids = np.asarray(sensors.node_ids, dtype=np.int64)
        pos = {int(s): j for j, s in enumerate(record.sensor_ids)}
        missing = [int(i) for i in ids if int(i) not in pos]
        if missing:
            raise DataError(f"record is missing sensor columns {missing}")
        cols = np.array([pos[int(i)] for i in ids])
        phi = record.sensor_phi[:, cols]
    return patterns_from_phi(phi, record.times, ids, case_id=record.case_id)


# =====================================================================
# CSV exchange
# =====================================================================

def _read_sensor_csv(path, value_name):
    with open(path) as f:
        header = f.readline().strip()
        fields = header.split(",")
        if len(fields) < 2 or fields[0] != "t":
            raise DataError(f"{path}: expected header 't,s<id>,...'")
        try:
            ids = np.array([int(name.lstrip("s")) for name in fields[1:]], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{path}: malformed sensor column name: {exc}") from exc
        try:
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed {value_name} row: {exc}") from exc
    if data.shape[1] != ids.size + 1:
        raise DataError(f"{path}: row width does not match header")
    times = data[:, 0]
    if times.size > 1 and np.any(np.diff(times) <= 0.0):
        raise DataError(f"{path}: times must be strictly increasing")
    return times, ids, data[:, 1:]


def load_series(path):
    """Read a raw damage history CSV (``t,s<node>,...``).

    Returns
    -------
    (times, sensor_ids, phi_values)
    """
    return _read_sensor_csv(path, "series")


def write_patterns(tsm, path):
    """Write a pattern matrix as ``t,s<node>,...`` CSV of g values."""
    header = "t," + ",".join(f"s{int(i)}" for i in tsm.sensor_ids)
    lines = [header]
    for t, row in zip(tsm.times, tsm.values):
        lines.append(f"{t:.17g}," + ",".join(f"{x:.17g}" for x in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_patterns(path, case_id=None):
    """Read a pattern matrix written by :func:`write_patterns`."""
    times, ids, values = _read_sensor_csv(path, "patterns")
    tsm = TimeSeriesMatrix(values=values, times=times, sensor_ids=ids, case_id=case_id)
    tsm.validate()
    return tsm
