"""Dog-bone specimen geometry, triangulation, and virtual sensor placement.

The specimen is a flat tensile coupon: two grip sections of full width joined
to a narrower gauge section by circular fillets tangent to the gauge flanks.
Geometry is parametrized by :class:`SpecimenParams`; :func:`build_specimen`
triangulates it with near-uniform linear triangles built from a hexagonal
interior lattice plus an exactly-on-outline boundary polyline.

Virtual sensors are mesh nodes picked by snapping a rectangular grid (denser
around the fillets, where failure localizes) onto the mesh; see
:func:`select_sensors`.
"""

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree
from shapely.geometry import Polygon

from .errors import ConfigurationError, DataError

__all__ = [
    "SpecimenParams",
    "Mesh",
    "SensorGrid",
    "SensorSet",
    "build_specimen",
    "default_sensor_grid",
    "select_sensors",
    "write_mesh",
    "read_mesh",
]

# Nodes are considered on a boundary line if within this distance (m).
BOUNDARY_TOL = 1.0e-9


# =====================================================================
# Specimen parametrization
# =====================================================================

@dataclass(frozen=True)
class SpecimenParams:
    """Dimensions of a flat dog-bone tensile specimen (meters).

    The gauge section of width ``gauge_width`` and length ``gauge_length``
    sits centered between two grip sections of width ``grip_width``; each
    transition is a circular fillet of radius ``fillet_radius`` tangent to
    the gauge flank.  Setting ``grip_width == gauge_width`` degenerates the
    specimen to a plain rectangle (no fillets).
    """

    gauge_length: float = 0.05
    gauge_width: float = 0.012
    grip_width: float = 0.02
    fillet_radius: float = 0.01
    total_length: float = 0.1
    thickness: float = 5.0e-3

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("gauge_length", "gauge_width", "grip_width", "total_length", "thickness"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigurationError(f"{name} must be positive, got {value!r}")
        if not np.isfinite(self.fillet_radius) or self.fillet_radius < 0.0:
            raise ConfigurationError(f"fillet_radius must be non-negative, got {self.fillet_radius!r}")
        if self.grip_width < self.gauge_width:
            raise ConfigurationError("grip_width must be at least gauge_width")
        step = 0.5 * (self.grip_width - self.gauge_width)
        if step > 0.0 and self.fillet_radius < step:
            raise ConfigurationError(
                "fillet_radius must be at least half the width difference "
                f"({step:g} m) for a tangent transition"
            )
        if self.gauge_length + 2.0 * self.transition_length > self.total_length:
            raise ConfigurationError("gauge plus fillet transitions exceed total_length")

    @property
    def transition_length(self):
        """Axial extent of one fillet transition."""
        step = 0.5 * (self.grip_width - self.gauge_width)
        r = self.fillet_radius
        if step == 0.0:
            return 0.0
        return math.sqrt(r * r - (r - step) ** 2)

    @property
    def section_breaks(self):
        """The five x-stations ``(x1, x2, x3, x4)`` bounding the fillets.

        Grip flats occupy ``[0, x1]`` and ``[x4, total_length]``, fillets
        ``[x1, x2]`` and ``[x3, x4]``, the gauge flat ``[x2, x3]``.
        """
        d = self.transition_length
        x2 = 0.5 * (self.total_length - self.gauge_length)
        x3 = x2 + self.gauge_length
        return (x2 - d, x2, x3, x3 + d)

    def half_width_at(self, x):
        """Half-width of the specimen profile at axial position ``x``."""
        x = np.asarray(x, dtype=float)
        x1, x2, x3, x4 = self.section_breaks
        wg = 0.5 * self.grip_width
        wn = 0.5 * self.gauge_width
        r = self.fillet_radius
        yc = wn + r
        out = np.full(x.shape, wg)
        gauge = (x >= x2) & (x <= x3)
        out[gauge] = wn
        left = (x >= x1) & (x < x2)
        out[left] = yc - np.sqrt(np.maximum(r * r - (x[left] - x2) ** 2, 0.0))
        right = (x > x3) & (x <= x4)
        out[right] = yc - np.sqrt(np.maximum(r * r - (x[right] - x3) ** 2, 0.0))
        return out if out.ndim else float(out)

    def area(self):
        """Exact planform area (m^2), fillet arcs integrated in closed form."""
        x1, x2, x3, x4 = self.section_breaks
        wg = 0.5 * self.grip_width
        wn = 0.5 * self.gauge_width
        r = self.fillet_radius
        d = self.transition_length
        if d > 0.0:
            # integral of (wn + r - sqrt(r^2 - u^2)) over one transition
            trans = (wn + r) * d - 0.5 * d * math.sqrt(r * r - d * d) - 0.5 * r * r * math.asin(d / r)
        else:
            trans = 0.0
        half = (x1 + self.total_length - x4) * wg + (x3 - x2) * wn + 2.0 * trans
        return 2.0 * half


def outline_points(params, segment_length):
    """Sample the specimen outline as a counterclockwise polyline.

    Points lie exactly on the analytic outline (flats and fillet arcs) with
    spacing at most ``segment_length``.  The first point is not repeated at
    the end.

    Returns
    -------
    ndarray, shape (k, 2)
    """
    x1, x2, x3, x4 = params.section_breaks
    L = params.total_length
    wg = 0.5 * params.grip_width
    wn = 0.5 * params.gauge_width
    r = params.fillet_radius
    d = params.transition_length

    def line(p0, p1, include_start):
        p0 = np.asarray(p0, float)
        p1 = np.asarray(p1, float)
        length = float(np.hypot(*(p1 - p0)))
        n = max(1, round(length / segment_length))
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = p0 + ts[:, None] * (p1 - p0)
        return pts if include_start else pts[1:]

    def arc(center, a0, a1, include_start):
        n = max(1, round(abs(a1 - a0) * r / segment_length))
        angles = np.linspace(a0, a1, n + 1)
        pts = np.column_stack(
            [center[0] + r * np.cos(angles), center[1] + r * np.sin(angles)]
        )
        return pts if include_start else pts[1:]

    # Top profile, left to right.
    top = [np.array([[0.0, wg]])]
    if d > 0.0:
        a_grip_l = math.atan2(wg - (wn + r), x1 - x2)  # junction with left grip flat
        a_grip_r = math.atan2(wg - (wn + r), x4 - x3)
        top.append(line((0.0, wg), (x1, wg), include_start=False))
        top.append(arc((x2, wn + r), a_grip_l, -0.5 * math.pi, include_start=False))
        top.append(line((x2, wn), (x3, wn), include_start=False))
        top.append(arc((x3, wn + r), -0.5 * math.pi, a_grip_r, include_start=False))
        top.append(line((x4, wg), (L, wg), include_start=False))
    else:
        top.append(line((0.0, wg), (L, wg), include_start=False))
    top = np.vstack(top)

    bottom = top.copy()[::-1]
    bottom[:, 1] *= -1.0  # right to left along y = -profile; reverse to go left->right
    bottom = bottom[::-1]

    ring = [
        bottom,  # (0, -wg) .. (L, -wg)
        line((L, -wg), (L, wg), include_start=False)[:-1],
        top[::-1],  # (L, wg) .. (0, wg)
        line((0.0, wg), (0.0, -wg), include_start=False)[:-1],
    ]
    pts = np.vstack(ring)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1.0e-12, axis=1)
    return pts[keep]


# =====================================================================
# Mesh
# =====================================================================

@dataclass
class Mesh:
    """Linear-triangle mesh of a specimen.

    Attributes
    ----------
    nodes : ndarray, shape (n, 2)
        Node coordinates (m).
    elements : ndarray, shape (m, 3)
        Counterclockwise node indices per triangle (0-based).
    fixed_set : ndarray
        Node ids on the clamped end (x = 0).
    loaded_set : ndarray
        Node ids on the pulled end (x = total_length).
    min_edge : float
        Shortest element edge (m).
    """

    nodes: np.ndarray
    elements: np.ndarray
    fixed_set: np.ndarray
    loaded_set: np.ndarray
    min_edge: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_areas(self):
        """Signed areas of all triangles (positive when counterclockwise)."""
        p = self.nodes[self.elements]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def boundary_edges(self):
        """Edges that belong to exactly one triangle, as (k, 2) node ids."""
        e = self.elements
        edges = np.vstack([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    def validate(self):
        """Raise :class:`ConfigurationError` on an inconsistent mesh."""
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ConfigurationError("nodes must be an (n, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ConfigurationError("elements must be an (m, 3) array")
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= self.n_nodes:
            raise ConfigurationError("element indices out of range")
        areas = self.element_areas()
        if areas.size and areas.min() <= 0.0:
            bad = int(np.argmin(areas))
            raise ConfigurationError(
                f"element {bad} has non-positive area {areas[bad]:.3e}"
            )
        for name, ids in (("fixed_set", self.fixed_set), ("loaded_set", self.loaded_set)):
            ids = np.asarray(ids)
            if ids.size == 0:
                raise ConfigurationError(f"{name} is empty")
            if ids.min() < 0 or ids.max() >= self.n_nodes:
                raise ConfigurationError(f"{name} contains out-of-range node ids")
        if np.intersect1d(self.fixed_set, self.loaded_set).size:
            raise ConfigurationError("fixed_set and loaded_set overlap")


def _min_edge_length(nodes, elements):
    p = nodes[elements]
    d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    return float(min(d01.min(), d12.min(), d20.min()))


def build_specimen(params, target_edge):
    """Triangulate a dog-bone specimen with near-uniform element size.

    Boundary nodes are placed exactly on the analytic outline at spacing at
    most ``target_edge``; interior nodes come from a hexagonal lattice of
    pitch ``target_edge`` kept clear of the boundary, and the point cloud is
    Delaunay triangulated.  Triangles whose centroid falls outside the
    outline (across the fillet concavities) are discarded.

    Parameters
    ----------
    params : SpecimenParams
    target_edge : float
        Requested element edge length (m).

    Returns
    -------
    Mesh
    """
    params.validate()
    if not np.isfinite(target_edge) or target_edge <= 0.0:
        raise ConfigurationError(f"target_edge must be positive, got {target_edge!r}")
    if target_edge > 0.5 * params.gauge_width:
        raise ConfigurationError(
            "target_edge too coarse: must not exceed half the gauge width"
        )

    boundary = outline_points(params, target_edge)
    polygon = Polygon(boundary)
    if not polygon.is_valid:
        raise ConfigurationError("specimen outline self-intersects")

    # Hexagonal interior lattice, symmetric about the y = 0 midline.
    dx = target_edge
    dy = target_edge * math.sqrt(3.0) / 2.0
    xmin, ymin, xmax, ymax = polygon.bounds
    js = np.arange(math.floor(ymin / dy), math.ceil(ymax / dy) + 1)
    ks = np.arange(math.floor(xmin / dx) - 1, math.ceil(xmax / dx) + 2)
    xg = ks[None, :] * dx + 0.5 * dx * (np.abs(js) % 2)[:, None]
    yg = np.broadcast_to(js[:, None] * dy, xg.shape)
    lattice = np.column_stack([xg.ravel(), yg.ravel()])

    clearance = 0.55 * target_edge
    inner = polygon.buffer(-clearance)
    keep = shapely.contains_xy(inner, lattice[:, 0], lattice[:, 1])
    points = np.vstack([boundary, lattice[keep]])
    points = np.unique(points, axis=0)

    tri = Delaunay(points)
    simplices = tri.simplices
    centroids = points[simplices].mean(axis=1)
    inside = shapely.contains_xy(polygon, centroids[:, 0], centroids[:, 1])
    p = points[simplices]
    areas2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    elements = simplices[inside & (np.abs(areas2) > 1.0e-14)]
    return _finalize_mesh(params, points, elements)


def _finalize_mesh(params, points, elements):
    # Enforce counterclockwise orientation.
    p = points[elements]
    areas2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    cw = areas2 < 0.0
    elements[cw] = elements[cw][:, [0, 2, 1]]

    # Drop nodes not referenced by any kept triangle and reindex.
    used = np.unique(elements)
    remap = -np.ones(points.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    nodes = points[used]
    elements = remap[elements]

    fixed = np.flatnonzero(np.abs(nodes[:, 0]) <= BOUNDARY_TOL)
    loaded = np.flatnonzero(np.abs(nodes[:, 0] - params.total_length) <= BOUNDARY_TOL)
    if fixed.size == 0 or loaded.size == 0:
        raise ConfigurationError("mesh has no nodes on a gripped end")

    mesh = Mesh(
        nodes=nodes,
        elements=np.ascontiguousarray(elements, dtype=np.int64),
        fixed_set=fixed,
        loaded_set=loaded,
        min_edge=_min_edge_length(nodes, elements),
    )
    mesh.validate()
    return mesh


# =====================================================================
# Mesh text format
# =====================================================================
# Plain whitespace-separated text with three section kinds:
#
#   NODES <count>            one "<id> <x> <y>" line per node
#   ELEMENTS <count>         one "<id> <n0> <n1> <n2>" line per triangle
#   SET <name> <count>       node ids, whitespace separated, any wrapping
#
# Ids are 0-based and must be contiguous in file order.

def write_mesh(mesh, path):
    """Write a mesh (with its fixed/loaded sets) to the text format."""
    lines = [f"NODES {mesh.n_nodes}"]
    for i, (x, y) in enumerate(mesh.nodes):
        lines.append(f"{i} {x:.17g} {y:.17g}")
    lines.append(f"ELEMENTS {mesh.n_elements}")
    for i, (a, b, c) in enumerate(mesh.elements):
        lines.append(f"{i} {a} {b} {c}")
    for name, ids in (("fixed", mesh.fixed_set), ("loaded", mesh.loaded_set)):
        lines.append(f"SET {name} {len(ids)}")
        lines.append(" ".join(str(int(i)) for i in ids))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_mesh(path):
    """Read a mesh from the text format written by :func:`write_mesh`.

    Returns
    -------
    (Mesh, dict)
        The mesh and a dict of all named sets found in the file.
    """
    with open(path) as f:
        tokens = f.read().split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise DataError(f"{path}: truncated mesh file")
        out = tokens[pos : pos + n]
        pos += n
        return out

    nodes = None
    elements = None
    sets = {}
    while pos < len(tokens):
        kind = take(1)[0].upper()
        if kind == "NODES":
            n = int(take(1)[0])
            rows = np.array(take(3 * n), dtype=float).reshape(n, 3)
            if not np.array_equal(rows[:, 0], np.arange(n)):
                raise DataError(f"{path}: node ids must be 0..{n - 1} in order")
            nodes = rows[:, 1:]
        elif kind == "ELEMENTS":
            m = int(take(1)[0])
            rows = np.array(take(4 * m), dtype=np.int64).reshape(m, 4)
            if not np.array_equal(rows[:, 0], np.arange(m)):
                raise DataError(f"{path}: element ids must be 0..{m - 1} in order")
            elements = rows[:, 1:]
        elif kind == "SET":
            name = take(1)[0]
            k = int(take(1)[0])
            sets[name] = np.array(take(k), dtype=np.int64)
        else:
            raise DataError(f"{path}: unknown section {kind!r}")
    if nodes is None or elements is None:
        raise DataError(f"{path}: missing NODES or ELEMENTS section")
    for required in ("fixed", "loaded"):
        if required not in sets:
            raise DataError(f"{path}: missing SET {required}")
    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        fixed_set=sets["fixed"],
        loaded_set=sets["loaded"],
        min_edge=_min_edge_length(nodes, elements),
    )
    mesh.validate()
    return mesh, sets


def _atomic_write_text(path, text):
    """Write text to ``path`` via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# =====================================================================
# Virtual sensors
# =====================================================================

@dataclass(frozen=True)
class SensorGrid:
    """Rectangular sampling grid used to pick sensor nodes.

    ``nx`` columns by ``ny`` rows spanning the mesh bounding box inset by
    ``margin`` on every side.  Within each x-band of ``refine_x_bands``
    extra columns are inserted at the midpoints of the base columns,
    doubling the sampling density there.
    """

    nx: int = 29
    ny: int = 5
    margin: float = 5.0e-4
    refine_x_bands: tuple = ()

    def points(self, bounds):
        """Grid points for a bounding box ``(xmin, xmax, ymin, ymax)``.

        Ordered column-major: x ascending, then y ascending within each
        column.
        """
        xmin, xmax, ymin, ymax = bounds
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("sensor grid needs nx >= 1 and ny >= 1")
        if xmin + self.margin > xmax - self.margin or ymin + self.margin > ymax - self.margin:
            raise ConfigurationError("sensor grid margin exceeds the mesh extent")
        # a single row or column sits centered, not at the low edge
        xs = (
            np.array([0.5 * (xmin + xmax)])
            if self.nx == 1
            else np.linspace(xmin + self.margin, xmax - self.margin, self.nx)
        )
        extra = []
        for lo, hi in self.refine_x_bands:
            mids = 0.5 * (xs[:-1] + xs[1:])
            extra.append(mids[(mids >= lo) & (mids <= hi)])
        if extra:
            xs = np.unique(np.concatenate([xs, *extra]))
        ys = (
            np.array([0.5 * (ymin + ymax)])
            if self.ny == 1
            else np.linspace(ymin + self.margin, ymax - self.margin, self.ny)
        )
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def describe(self):
        bands = ";".join(f"{lo:.6g}:{hi:.6g}" for lo, hi in self.refine_x_bands)
        return f"grid nx={self.nx} ny={self.ny} margin={self.margin:.6g} refine=[{bands}]"


@dataclass(frozen=True)
class SensorSet:
    """Ordered sensor node ids with a description of how they were chosen."""

    node_ids: np.ndarray
    layout: str

    def __len__(self):
        return len(self.node_ids)


def default_sensor_grid(params):
    """Sensor grid matched to a specimen: extra columns over both fillets."""
    x1, x2, x3, x4 = params.section_breaks
    bands = ((x1, x2), (x3, x4)) if x2 > x1 else ()
    return SensorGrid(nx=29, ny=5, margin=5.0e-4, refine_x_bands=bands)


def select_sensors(mesh, grid):
    """Snap a sensor grid onto mesh nodes.

    Each grid point maps to its nearest node; duplicate hits keep only the
    first occurrence, so the result preserves grid order and contains no
    repeated nodes.

    Returns
    -------
    SensorSet
    """
    xmin, ymin = mesh.nodes.min(axis=0)
    xmax, ymax = mesh.nodes.max(axis=0)
    pts = grid.points((xmin, xmax, ymin, ymax))
    _, idx = cKDTree(mesh.nodes).query(pts)
    seen = set()
    ids = []
    for i in idx:
        i = int(i)
        if i not in seen:
            seen.add(i)
            ids.append(i)
    if not ids:
        raise ConfigurationError("sensor grid selected no nodes")
    return SensorSet(node_ids=np.array(ids, dtype=np.int64), layout=grid.describe())
