"""Symmetry-preserving triangulations and finite-volume geometry.

Nodes are generated so that the node set is exactly invariant (up to float
round-off) under the declared symmetry group of the domain: candidate lattice
points are folded into a fundamental wedge, deduplicated there, and the full
group orbit of each survivor is emitted.  The triangulation is the Delaunay
triangulation of that point set, restricted to the polygon.

For each triangle edge (j, k) opposite the vertex l, the finite-volume edge
coefficient is

    alpha_jk = t / (2 sqrt(1 - t^2)),    t = <u, v>

with u, v the unit vectors of the two other edges of the triangle (both taken
from the shared vertex l).  t is the cosine of the angle opposite the edge,
so alpha_jk = cot(theta_l) / 2; it is negative when that angle is obtuse.
The dual (Voronoi) cell areas follow from the same coefficients via

    V contribution of triangle at vertex j = sum over the two edges at j of
    alpha_e |e|^2 / 4,

which sums exactly to the triangle area.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree
from shapely.geometry import Polygon

from . import symmetry
from .errors import DegenerateTriangle, MeshingFailed, NotSymmetric

FORMAT_VERSION = 1

_STAR4_INNER_OFFSET = np.arctan2(1.0, 2.0)  # angular offset of inner corners


@dataclass(frozen=True)
class DomainSpec:
    """Shape + declared symmetry + resolution."""

    shape: str  # equilateral_triangle | square | star4 | polygon
    params: tuple  # shape parameters, see the constructors below
    symmetry: symmetry.GroupSpec
    target_edge_length: float

    def __post_init__(self):
        if self.target_edge_length <= 0:
            raise ValueError("target_edge_length must be positive")
        if self.shape in ("equilateral_triangle", "square"):
            if self.params[0] <= 0:
                raise ValueError("side must be positive")
        elif self.shape == "star4":
            if min(self.params) <= 0:
                raise ValueError("radii must be positive")
        elif self.shape != "polygon":
            raise ValueError("unknown shape %r" % (self.shape,))
        verts = self.polygon_vertices()
        _check_declared_symmetry(verts, self.symmetry)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def triangle(side, h, symmetry_kind="D"):
        return DomainSpec(
            "equilateral_triangle", (float(side),), symmetry.GroupSpec(symmetry_kind, 3), h
        )

    @staticmethod
    def square(side, h, symmetry_kind="D"):
        return DomainSpec("square", (float(side),), symmetry.GroupSpec(symmetry_kind, 4), h)

    @staticmethod
    def star4(outer_radius, inner_radius, h):
        # chiral four-pointed star; only the rotations survive
        return DomainSpec(
            "star4", (float(outer_radius), float(inner_radius)), symmetry.GroupSpec("C", 4), h
        )

    @staticmethod
    def polygon(vertices, h, group=None):
        verts = tuple(tuple(float(x) for x in p) for p in vertices)
        group = group or symmetry.GroupSpec("C", 1)
        return DomainSpec("polygon", verts, group, h)

    # -- geometry ----------------------------------------------------------

    def polygon_vertices(self):
        if self.shape == "equilateral_triangle":
            (side,) = self.params
            r = side / np.sqrt(3.0)
            ang = np.deg2rad([90.0, 210.0, 330.0])
            return np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        if self.shape == "square":
            (side,) = self.params
            hh = side / 2.0
            return np.array([[hh, hh], [-hh, hh], [-hh, -hh], [hh, -hh]])
        if self.shape == "star4":
            ro, ri = self.params
            pts = []
            for k in range(4):
                base = np.pi / 4 + k * np.pi / 2
                pts.append([ro * np.cos(base), ro * np.sin(base)])
                a = base + _STAR4_INNER_OFFSET
                pts.append([ri * np.cos(a), ri * np.sin(a)])
            return np.array(pts)
        return np.array(self.params, dtype=float)

    def to_dict(self):
        return {
            "shape": self.shape,
            "params": [list(p) for p in self.params]
            if self.shape == "polygon"
            else list(self.params),
            "symmetry": [self.symmetry.kind, self.symmetry.m],
            "target_edge_length": self.target_edge_length,
        }

    @staticmethod
    def from_dict(d):
        kind, m = d["symmetry"]
        params = d["params"]
        if d["shape"] == "polygon":
            params = tuple(tuple(p) for p in params)
        else:
            params = tuple(params)
        return DomainSpec(
            d["shape"], params, symmetry.GroupSpec(kind, int(m)), d["target_edge_length"]
        )


def _polygon_centroid(verts):
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy]), abs(a)


def _check_declared_symmetry(verts, group, tol=1e-9):
    c, _ = _polygon_centroid(verts)
    scale = max(1.0, np.abs(verts - c).max())
    tree = cKDTree(verts)
    for g in group.generators():
        img = c + (verts - c) @ g.mat.T
        d, _ = tree.query(img)
        if d.max() > tol * scale:
            raise NotSymmetric(
                "declared symmetry %s_%d is not a symmetry of the shape "
                "(vertex orbit mismatch %.2e)" % (group.kind, group.m, d.max())
            )


class Mesh:
    """Immutable triangulation with finite-volume geometry attached.

    Attributes
    ----------
    nodes : (n, 2) float
    triangles : (m, 3) int, positively oriented
    edges : (E, 2) int, j < k
    edge_alpha : (E,) float, coefficient summed over incident triangles
    tri_edge_alpha : (m, 3) float, per-triangle coefficient of the edge
        opposite local vertex l
    control_volumes : (n,) float, dual cell areas
    edge_mu_phase : (E,) float, line integral of the unit-field vector
        potential along the edge; the link variable is exp(-i mu phase)
    """

    def __init__(self, spec, nodes, triangles):
        self.spec = spec
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        verts = spec.polygon_vertices()
        self.centroid, self.domain_area = _polygon_centroid(verts)
        self._build_geometry()
        self._perm_cache = {}
        self._kin_cache = {}
        self._tree = cKDTree(self.nodes)

    @property
    def n(self):
        return len(self.nodes)

    def _build_geometry(self):
        p = self.nodes
        tri = self.triangles
        # orient positively
        d1 = p[tri[:, 1]] - p[tri[:, 0]]
        d2 = p[tri[:, 2]] - p[tri[:, 0]]
        areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        flip = areas < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        self.tri_areas = np.abs(areas)
        if np.any(self.tri_areas < 1e-14 * self.tri_areas.max()):
            raise DegenerateTriangle("triangulation contains (near-)degenerate triangles")

        # edge coefficients: for the edge opposite local vertex l, t is the
        # dot product of the unit vectors of the two edges meeting at l
        alpha = np.empty((len(tri), 3))
        for l in range(3):
            a, b = tri[:, (l + 1) % 3], tri[:, (l + 2) % 3]
            u = p[a] - p[tri[:, l]]
            v = p[b] - p[tri[:, l]]
            t = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            if np.any(np.abs(t) >= 1.0 - 1e-12):
                raise DegenerateTriangle("collinear triangle (|t| >= 1 - 1e-12)")
            alpha[:, l] = 0.5 * t / np.sqrt(1.0 - t * t)
        self.tri_edge_alpha = alpha

        # unique undirected edges
        e_all = np.concatenate(
            [tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]
        )  # edge opposite l, for l = 0, 1, 2, stacked triangle-major
        e_sorted = np.sort(e_all, axis=1)
        edges, inv = np.unique(e_sorted, axis=0, return_inverse=True)
        self.edges = edges
        self.tri_edge_index = inv.reshape(3, len(tri)).T  # (m, 3)
        self.edge_alpha = np.zeros(len(edges))
        np.add.at(self.edge_alpha, self.tri_edge_index.ravel(order="F"), alpha.ravel(order="F"))

        ev = p[edges[:, 0]] - p[edges[:, 1]]
        self.edge_lengths = np.linalg.norm(ev, axis=1)

        # dual cell areas from per-triangle corner contributions
        cv = np.zeros(self.n)
        l2 = self.edge_lengths**2
        for l in range(3):
            contrib = alpha[:, l] * l2[self.tri_edge_index[:, l]] / 4.0
            np.add.at(cv, tri[:, (l + 1) % 3], contrib)
            np.add.at(cv, tri[:, (l + 2) % 3], contrib)
        self.control_volumes = cv
        if np.any(cv <= 0):
            raise MeshingFailed("non-positive dual cell area (mesh too distorted)")
        if abs(cv.sum() - self.domain_area) > 1e-10 * self.domain_area:
            raise MeshingFailed(
                "dual cell areas sum to %.15g, polygon area is %.15g"
                % (cv.sum(), self.domain_area)
            )

        self.obtuse_triangle_fraction = float(np.mean((alpha < 0).any(axis=1)))
        if self.obtuse_triangle_fraction > 0.05:
            warnings.warn(
                "mesh has %.1f%% obtuse triangles; finite-volume accuracy degrades"
                % (100 * self.obtuse_triangle_fraction)
            )

        # vector potential of a unit applied field, symmetric gauge about the
        # centroid, integrated along each edge (midpoint rule, exact here)
        mid = 0.5 * (p[edges[:, 0]] + p[edges[:, 1]]) - self.centroid
        a_unit = 0.5 * np.column_stack([-mid[:, 1], mid[:, 0]])
        self.edge_mu_phase = (ev * a_unit).sum(1)

        self.scale = float(np.abs(p - self.centroid).max())

    # -- symmetry ----------------------------------------------------------

    def symmetry_node_map(self, g):
        """Node permutation pi with nodes[pi[i]] = M nodes[i] (about the
        centroid) for the spatial part M of the group element g."""
        key = np.round(g.mat, 12).tobytes()
        perm = self._perm_cache.get(key)
        if perm is None:
            img = self.centroid + (self.nodes - self.centroid) @ g.mat.T
            d, idx = self._tree.query(img)
            if d.max() > 1e-9 * max(1.0, self.scale) or len(np.unique(idx)) != self.n:
                raise NotSymmetric(
                    "mesh nodes are not invariant under %s (max mismatch %.2e)"
                    % (g.word, d.max())
                )
            perm = idx.astype(np.int64)
            perm.setflags(write=False)
            self._perm_cache[key] = perm
        return perm

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "control_volumes": self.control_volumes.tolist(),
            "edges": self.edges.tolist(),
            "edge_alpha": self.edge_alpha.tolist(),
            "domain_area": self.domain_area,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True)

    @staticmethod
    def load(path):
        with open(path) as f:
            d = json.load(f)
        if d.get("format_version") != FORMAT_VERSION:
            raise MeshingFailed("unsupported mesh format version %r" % d.get("format_version"))
        spec = DomainSpec.from_dict(d["spec"])
        return Mesh(spec, np.array(d["nodes"]), np.array(d["triangles"]))

    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.round(self.nodes, 12).tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]


def _boundary_points(verts, h):
    pts = []
    nv = len(verts)
    for i in range(nv):
        a, b = verts[i], verts[(i + 1) % nv]
        ne = max(1, int(round(np.linalg.norm(b - a) / h)))
        for t in np.arange(ne) / ne:
            pts.append((1 - t) * a + t * b)
    return np.array(pts)


def _interior_lattice(verts, h):
    xmin, ymin = verts.min(0) - h
    xmax, ymax = verts.max(0) + h
    dy = h * np.sqrt(3.0) / 2.0
    rows = []
    j = 0
    y = ymin
    while y <= ymax:
        xs = np.arange(xmin + (0.5 * h if j % 2 else 0.0), xmax + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
        y += dy
        j += 1
    pts = np.concatenate(rows)
    poly = Polygon(verts).buffer(-0.45 * h)
    keep = shapely.contains_xy(poly, pts[:, 0], pts[:, 1])
    return pts[keep]


def _symmetrize_points(pts, centroid, group, h):
    """Fold points into a fundamental domain, deduplicate there, and expand
    full group orbits so the returned set is exactly group-invariant."""
    if group.order == 1 or len(pts) == 0:
        return pts
    rel = pts - centroid

    # snap near-fixed points onto the fixed sets of the group
    r = np.linalg.norm(rel, axis=1)
    rel = rel[r > 0.35 * h]  # points at the rotation center collapse to it
    on_center = r.min(initial=np.inf) <= 0.35 * h if len(r) else False
    if group.kind == "D":
        # reflection axes: fixed lines of tau^j sigma; sigma fixes x = 0,
        # conjugates fix lines at angles pi/2 + pi j / m
        for j in range(group.m):
            ang = np.pi / 2 + np.pi * j / group.m
            n_hat = np.array([np.cos(ang - np.pi / 2), np.sin(ang - np.pi / 2)])
            d = rel @ n_hat
            near = np.abs(d) <= 0.35 * h
            rel[near] -= np.outer(d[near], n_hat)

    mats = [g.mat for g in group.elements()]
    orbit = np.stack([rel @ m.T for m in mats])  # (G, N, 2)
    # canonical representative: lexicographic max over the orbit, with mild
    # quantization so float jitter cannot flip the choice between copies
    q = np.round(orbit / (1e-7 * max(1.0, np.abs(rel).max(initial=1.0))))
    order = np.lexsort((q[..., 1], q[..., 0]), axis=0)
    pick = order[-1]  # (N,)
    canon = orbit[pick, np.arange(orbit.shape[1])]

    # deduplicate in the fundamental domain
    tree = cKDTree(canon)
    pairs = tree.query_pairs(r=0.6 * h, output_type="ndarray")
    drop = np.zeros(len(canon), bool)
    for i, j in pairs:
        if not drop[i] and not drop[j]:
            drop[max(i, j)] = True
    canon = canon[~drop]

    # emit full orbits, then merge exactly-coincident copies (axis points)
    full = np.concatenate([canon @ m.T for m in mats])
    if on_center:
        full = np.concatenate([full, [[0.0, 0.0]]])
    tree = cKDTree(full)
    groups = tree.query_ball_point(full, r=1e-7 * max(1.0, np.abs(full).max()))
    keep = np.array([i == min(g) for i, g in enumerate(groups)])
    return centroid + full[keep]


def build_mesh(spec):
    """Construct a symmetry-preserving Delaunay mesh for the given domain."""
    verts = spec.polygon_vertices()
    h = spec.target_edge_length
    centroid, _ = _polygon_centroid(verts)
    bnd = _boundary_points(verts, h)
    interior = _symmetrize_points(_interior_lattice(verts, h), centroid, spec.symmetry, h)
    pts = np.concatenate([bnd, interior]) if len(interior) else bnd
    if len(pts) < 3:
        raise MeshingFailed("resolution too coarse: fewer than 3 nodes")

    try:
        dela = Delaunay(pts)
    except Exception as exc:  # qhull failures
        raise MeshingFailed("Delaunay triangulation failed: %s" % exc) from exc
    tri = dela.simplices

    # restrict to the polygon (relevant for the non-convex star)
    cent = pts[tri].mean(axis=1)
    poly = Polygon(verts)
    inside = shapely.contains_xy(poly, cent[:, 0], cent[:, 1])
    tri = tri[inside]
    if len(tri) == 0:
        raise MeshingFailed("no triangles inside the polygon")

    used = np.unique(tri)
    if len(used) != len(pts):
        # drop orphan nodes (can happen for slivers outside the polygon)
        remap = -np.ones(len(pts), dtype=np.int64)
        remap[used] = np.arange(len(used))
        pts = pts[used]
        tri = remap[tri]

    mesh = Mesh(spec, pts, tri)
    # construction-time invariance check against every generator
    for g in spec.symmetry.generators():
        mesh.symmetry_node_map(g)
    return mesh
