"""Folded Miura-ori mesh construction and crease-angle geometry.

A mesh is a pin-jointed truss network: every crease (and every facet
triangulation diagonal) is a stretchable bar, and every interior edge carries
a torsional hinge whose state variable is the dihedral angle between its two
wing triangles.  Angles follow the convention that valley folds live in
(0, pi] and mountain folds in (pi, 2*pi].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DesignError, GeometryError

# fold_sign values
VALLEY = 1
MOUNTAIN = -1
FLAT = 0


@dataclass(frozen=True)
class MiuraDesign:
    """Geometric parameters of a folded Miura-ori sheet.

    ``a`` is the crease length of the in-plane zigzag family (y direction),
    ``b`` the crease length of the corrugation family (x direction),
    ``gamma`` the parallelogram sector angle, and ``theta`` the dihedral
    angle between each facet and the x-y plane.  ``n_rows`` and ``n_cols``
    count nodes along x and y respectively.
    """

    a: float = 0.016
    b: float = 0.010
    gamma: float = math.radians(48.0)
    theta: float = math.radians(60.0)
    n_rows: int = 9
    n_cols: int = 9

    def validate(self):
        if not self.a > 0:
            raise DesignError(f"design.a must be > 0, got {self.a}")
        if not self.b > 0:
            raise DesignError(f"design.b must be > 0, got {self.b}")
        if not 0 < self.gamma < math.pi / 2:
            raise DesignError(
                f"design.gamma must lie in (0, pi/2), got {self.gamma}")
        if not 0 < self.theta < math.pi / 2:
            raise DesignError(
                f"design.theta must lie in (0, pi/2), got {self.theta}")
        if self.n_rows < 2:
            raise DesignError(f"design.n_rows must be >= 2, got {self.n_rows}")
        if self.n_cols < 2:
            raise DesignError(f"design.n_cols must be >= 2, got {self.n_cols}")


@dataclass(frozen=True)
class Material:
    """Bar and hinge stiffness constants plus the per-node mass.

    ``k_s``: initial axial stiffness of every bar (N/m); the bar's EA is set
    to ``k_s * rest_length`` so the rest-state stiffness matches.
    ``k_c``: passive crease torsional stiffness per unit length (N/(m rad)).
    ``k_c_a``: torsional stiffness per unit length of actuated creases.
    ``k_f``: facet-bending (diagonal hinge) stiffness per unit length.
    """

    k_s: float = 100.0
    k_c: float = 0.2525
    k_c_a: float = 1.0
    k_f: float = 10.0
    nodal_mass: float = 0.007


@dataclass(frozen=True)
class ImperfectionSpec:
    """Spatially correlated vertex perturbation parameters."""

    chi: float
    corr_length: float
    seed: int = 0

    def validate(self):
        if self.chi < 0:
            raise DesignError(f"imperfection.chi must be >= 0, got {self.chi}")
        if not self.corr_length > 0:
            raise DesignError(
                f"imperfection.corr_length must be > 0, got {self.corr_length}")


@dataclass(frozen=True, eq=False)
class OrigamiMesh:
    """The physical body: nodes, bars, hinges, and their rest geometry.

    Array shapes: ``positions`` (n, 3), ``masses`` (n,),
    ``truss_nodes`` (m, 2), ``truss_rest``/``truss_ea`` (m,),
    ``hinge_nodes`` (h, 4) ordered (p, q, r, v), ``hinge_k_per_len`` (h,),
    ``hinge_rest`` (h,), ``hinge_is_facet`` (h,) bool,
    ``hinge_fold_sign`` (h,) in {VALLEY, MOUNTAIN, FLAT}.
    Instances are immutable; all arrays are write-protected.
    """

    positions: np.ndarray
    masses: np.ndarray
    truss_nodes: np.ndarray
    truss_rest: np.ndarray
    truss_ea: np.ndarray
    hinge_nodes: np.ndarray
    hinge_k_per_len: np.ndarray
    hinge_rest: np.ndarray
    hinge_is_facet: np.ndarray
    hinge_fold_sign: np.ndarray
    design: MiuraDesign | None = None
    material: Material = field(default_factory=Material)

    def __post_init__(self):
        for name in ("positions", "masses", "truss_nodes", "truss_rest",
                     "truss_ea", "hinge_nodes", "hinge_k_per_len",
                     "hinge_rest", "hinge_is_facet", "hinge_fold_sign"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n_nodes(self):
        return self.positions.shape[0]

    @property
    def n_trusses(self):
        return self.truss_nodes.shape[0]

    @property
    def n_hinges(self):
        return self.hinge_nodes.shape[0]

    @property
    def crease_indices(self):
        """Indices of interior-edge (crease) hinges, in construction order."""
        return np.flatnonzero(~self.hinge_is_facet)

    @property
    def n_creases(self):
        return int(np.count_nonzero(~self.hinge_is_facet))

    def with_arrays(self, **overrides):
        """Copy of this mesh with some arrays replaced (rest geometry intact
        unless overridden)."""
        fields = dict(
            positions=self.positions, masses=self.masses,
            truss_nodes=self.truss_nodes, truss_rest=self.truss_rest,
            truss_ea=self.truss_ea, hinge_nodes=self.hinge_nodes,
            hinge_k_per_len=self.hinge_k_per_len, hinge_rest=self.hinge_rest,
            hinge_is_facet=self.hinge_is_facet,
            hinge_fold_sign=self.hinge_fold_sign,
            design=self.design, material=self.material,
        )
        for key, val in overrides.items():
            if isinstance(val, np.ndarray):
                val = val.copy()
            fields[key] = val
        return OrigamiMesh(**fields)


def _folded_lattice(design):
    """Closed-form lattice steps of the folded Miura sheet.

    Node (i, j) sits at (i*sx + (j % 2)*dx, j*sy, (i % 2)*h).  The four
    values are fixed by requiring edge lengths a and b, sector angle gamma,
    and facet-to-plane dihedral theta.
    """
    a, b = design.a, design.b
    g, t = design.gamma, design.theta
    cb = math.sqrt(math.cos(g) ** 2 + math.sin(g) ** 2 * math.cos(t) ** 2)
    h = b * math.sin(g) * math.sin(t)
    sx = b * cb
    dx = a * math.cos(g) / cb
    sy = a * math.sin(g) * math.cos(t) / cb
    return sx, dx, sy, h


def dihedral_angle(positions, hinge):
    """Dihedral angle (rad) of a hinge (p, q, r, v) in (0, 2*pi].

    The sign rule places valley folds in (0, pi] and mountain folds in
    (pi, 2*pi].  Raises ``GeometryError`` on a zero-area wing triangle.
    """
    p, q, r, v = (positions[int(k)] for k in hinge)
    r_pq = p - q
    m = np.cross(r - q, r_pq)
    n = np.cross(r_pq, p - v)
    nm, nn = np.linalg.norm(m), np.linalg.norm(n)
    scale = np.linalg.norm(r_pq)
    if nm <= 1e-14 * scale * scale or nn <= 1e-14 * scale * scale:
        raise GeometryError("degenerate wing triangle: zero-area normal")
    c = np.clip(np.dot(m, n) / (nm * nn), -1.0, 1.0)
    d = np.dot(m, p - v)
    eta = 1.0 if d == 0.0 else math.copysign(1.0, d)
    return (eta * math.acos(c)) % (2.0 * math.pi)


def dihedral_gradient(positions, hinge):
    """Analytic gradients of the dihedral angle w.r.t. the four hinge nodes.

    Returns a (4, 3) array ordered (p, q, r, v).  The wing gradients point
    along the triangle normals; the axis-node gradients complete them so the
    angle is invariant under rigid translation.
    """
    p, q, r, v = (positions[int(k)] for k in hinge)
    r_pq = p - q
    r_rq = r - q
    r_pv = p - v
    m = np.cross(r_rq, r_pq)
    n = np.cross(r_pq, r_pv)
    m2 = np.dot(m, m)
    n2 = np.dot(n, n)
    l_pq = np.linalg.norm(r_pq)
    if m2 <= (1e-14 * l_pq * l_pq) ** 2 or n2 <= (1e-14 * l_pq * l_pq) ** 2:
        raise GeometryError("degenerate wing triangle: zero-area normal")
    g_r = (l_pq / m2) * m
    g_v = -(l_pq / n2) * n
    g_p = (np.dot(r_pv, r_pq) / l_pq ** 2 - 1.0) * g_v \
        - (np.dot(r_rq, r_pq) / l_pq ** 2) * g_r
    g_q = -(g_p + g_r + g_v)
    return np.stack([g_p, g_q, g_r, g_v])


def all_dihedrals(positions, hinge_nodes):
    """Vectorized dihedral angles for an (h, 4) hinge-node array."""
    p = positions[hinge_nodes[:, 0]]
    q = positions[hinge_nodes[:, 1]]
    r = positions[hinge_nodes[:, 2]]
    v = positions[hinge_nodes[:, 3]]
    r_pq = p - q
    m = np.cross(r - q, r_pq)
    n = np.cross(r_pq, p - v)
    nm = np.linalg.norm(m, axis=1)
    nn = np.linalg.norm(n, axis=1)
    if np.any(nm <= 0.0) or np.any(nn <= 0.0):
        bad = int(np.flatnonzero((nm <= 0.0) | (nn <= 0.0))[0])
        raise GeometryError(f"degenerate wing triangle at hinge {bad}")
    c = np.clip(np.einsum("ij,ij->i", m, n) / (nm * nn), -1.0, 1.0)
    d = np.einsum("ij,ij->i", m, p - v)
    eta = np.where(d == 0.0, 1.0, np.sign(d))
    return (eta * np.arccos(c)) % (2.0 * np.pi)


def build_miura(design: MiuraDesign, material: Material | None = None):
    """Construct a folded Miura-ori mesh from its design parameters.

    Quadrilateral facets are triangulated along their shorter diagonal.
    Interior pattern edges become crease hinges (stiffness ``k_c`` per unit
    length), diagonals become facet hinges (``k_f``).  The sheet mass is
    spread equally over the nodes.
    """
    design.validate()
    if material is None:
        material = Material()
    nx, ny = design.n_rows, design.n_cols
    sx, dx, sy, h = _folded_lattice(design)

    def nid(i, j):
        return i * ny + j

    n_nodes = nx * ny
    pos = np.empty((n_nodes, 3))
    for i in range(nx):
        for j in range(ny):
            pos[nid(i, j)] = (i * sx + (j % 2) * dx, j * sy, (i % 2) * h)

    # facet diagonals: diag[(i, j)] = (node_a, node_b), shorter one
    diag = {}
    trusses = []
    for i in range(nx - 1):
        for j in range(ny):
            trusses.append((nid(i, j), nid(i + 1, j)))        # b-creases (x)
    for i in range(nx):
        for j in range(ny - 1):
            trusses.append((nid(i, j), nid(i, j + 1)))        # a-creases (y)
    for i in range(nx - 1):
        for j in range(ny - 1):
            d0 = (nid(i, j), nid(i + 1, j + 1))
            d1 = (nid(i + 1, j), nid(i, j + 1))
            l0 = np.linalg.norm(pos[d0[0]] - pos[d0[1]])
            l1 = np.linalg.norm(pos[d1[0]] - pos[d1[1]])
            diag[(i, j)] = d0 if l0 <= l1 else d1
            trusses.append(diag[(i, j)])

    def diag_end_with_col(i, j, col):
        # endpoint of facet (i, j)'s diagonal lying in node column y=col
        for node in diag[(i, j)]:
            if node % ny == col:
                return node
        raise GeometryError(f"facet ({i},{j}) diagonal misses column {col}")

    def diag_end_with_row(i, j, row):
        for node in diag[(i, j)]:
            if node // ny == row:
                return node
        raise GeometryError(f"facet ({i},{j}) diagonal misses row {row}")

    hinges = []          # (p, q, r, v)
    is_facet = []
    # interior x-edges: wings from the facets at y-columns j-1 and j
    for i in range(nx - 1):
        for j in range(1, ny - 1):
            p, q = nid(i, j), nid(i + 1, j)
            r = diag_end_with_col(i, j - 1, j - 1)
            v = diag_end_with_col(i, j, j + 1)
            hinges.append((p, q, r, v))
            is_facet.append(False)
    # interior y-edges: wings from the facets at x-rows i-1 and i
    for i in range(1, nx - 1):
        for j in range(ny - 1):
            p, q = nid(i, j), nid(i, j + 1)
            r = diag_end_with_row(i - 1, j, i - 1)
            v = diag_end_with_row(i, j, i + 1)
            hinges.append((p, q, r, v))
            is_facet.append(False)
    # facet hinges along the diagonals
    for i in range(nx - 1):
        for j in range(ny - 1):
            p, q = diag[(i, j)]
            corners = {nid(i, j), nid(i + 1, j), nid(i, j + 1),
                       nid(i + 1, j + 1)} - {p, q}
            r, v = sorted(corners)
            hinges.append((p, q, r, v))
            is_facet.append(True)

    truss_nodes = np.asarray(trusses, dtype=np.int64)
    truss_rest = np.linalg.norm(
        pos[truss_nodes[:, 0]] - pos[truss_nodes[:, 1]], axis=1)
    truss_ea = material.k_s * truss_rest

    hinge_nodes = np.asarray(hinges, dtype=np.int64)
    is_facet = np.asarray(is_facet, dtype=bool)
    hinge_rest = all_dihedrals(pos, hinge_nodes)
    k_per_len = np.where(is_facet, material.k_f, material.k_c)
    fold_sign = np.zeros(len(hinges), dtype=np.int8)
    fold_sign[~is_facet] = np.where(
        hinge_rest[~is_facet] <= np.pi, VALLEY, MOUNTAIN)

    masses = np.full(n_nodes, material.nodal_mass)
    return OrigamiMesh(
        positions=pos, masses=masses,
        truss_nodes=truss_nodes, truss_rest=truss_rest, truss_ea=truss_ea,
        hinge_nodes=hinge_nodes, hinge_k_per_len=k_per_len,
        hinge_rest=hinge_rest, hinge_is_facet=is_facet,
        hinge_fold_sign=fold_sign, design=design, material=material)


def pairwise_coupling_std(mesh, spec: ImperfectionSpec):
    """Pairwise perturbation coupling, chi * exp(-|Ni - Nj| / l), as a matrix."""
    d = np.linalg.norm(
        mesh.positions[:, None, :] - mesh.positions[None, :, :], axis=2)
    return spec.chi * np.exp(-d / spec.corr_length)


def perturb_vertices(mesh, spec: ImperfectionSpec, jitter=0.0):
    """Apply a correlated Gaussian perturbation to the node positions.

    One zero-mean field per axis is drawn from the covariance
    chi^2 * exp(-|Ni - Nj| / l) built from the rest-state pairwise distances,
    so the marginal displacement std per axis is chi.  Bar rest lengths (and
    EA), and hinge rest angles are recomputed from the perturbed geometry.
    """
    spec.validate()
    if spec.chi == 0.0:
        return mesh
    cov = spec.chi * pairwise_coupling_std(mesh, spec)
    if jitter:
        cov = cov + jitter * np.eye(mesh.n_nodes)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(
            "imperfection covariance factorization failed; retry with "
            "jitter regularization (add 1e-12 to the diagonal)") from exc
    rng = np.random.default_rng(spec.seed)
    disp = chol @ rng.standard_normal((mesh.n_nodes, 3))
    pos = mesh.positions + disp
    rest = np.linalg.norm(
        pos[mesh.truss_nodes[:, 0]] - pos[mesh.truss_nodes[:, 1]], axis=1)
    return mesh.with_arrays(
        positions=pos,
        truss_rest=rest,
        truss_ea=mesh.material.k_s * rest,
        hinge_rest=all_dihedrals(pos, mesh.hinge_nodes))


def mesh_to_json(mesh, path=None):
    """Serialize a mesh to the documented JSON schema (see README)."""
    sign_name = {VALLEY: "valley", MOUNTAIN: "mountain", FLAT: None}
    doc = {
        "design": asdict(mesh.design) if mesh.design is not None else None,
        "material": asdict(mesh.material),
        "nodes": mesh.positions.tolist(),
        "masses": mesh.masses.tolist(),
        "trusses": [
            {"nodes": [int(i), int(j)], "rest_length": float(l),
             "ea": float(ea)}
            for (i, j), l, ea in zip(mesh.truss_nodes, mesh.truss_rest,
                                     mesh.truss_ea)
        ],
        "hinges": [
            {"nodes": [int(k) for k in nodes],
             "kind": "facet" if facet else "crease",
             "k_per_length": float(k),
             "rest_angle": float(rest),
             "fold_sign": sign_name[int(s)]}
            for nodes, facet, k, rest, s in zip(
                mesh.hinge_nodes, mesh.hinge_is_facet, mesh.hinge_k_per_len,
                mesh.hinge_rest, mesh.hinge_fold_sign)
        ],
    }
    text = json.dumps(doc, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def mesh_from_json(source):
    """Rebuild a mesh from the JSON produced by :func:`mesh_to_json`."""
    if isinstance(source, (str, bytes)) and not str(source).lstrip().startswith("{"):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(source)
    sign_value = {"valley": VALLEY, "mountain": MOUNTAIN, None: FLAT}
    design = MiuraDesign(**doc["design"]) if doc.get("design") else None
    material = Material(**doc["material"])
    return OrigamiMesh(
        positions=np.asarray(doc["nodes"], dtype=float),
        masses=np.asarray(doc["masses"], dtype=float),
        truss_nodes=np.asarray([t["nodes"] for t in doc["trusses"]],
                               dtype=np.int64),
        truss_rest=np.asarray([t["rest_length"] for t in doc["trusses"]]),
        truss_ea=np.asarray([t["ea"] for t in doc["trusses"]]),
        hinge_nodes=np.asarray([h["nodes"] for h in doc["hinges"]],
                               dtype=np.int64),
        hinge_k_per_len=np.asarray([h["k_per_length"] for h in doc["hinges"]]),
        hinge_rest=np.asarray([h["rest_angle"] for h in doc["hinges"]]),
        hinge_is_facet=np.asarray(
            [h["kind"] == "facet" for h in doc["hinges"]], dtype=bool),
        hinge_fold_sign=np.asarray(
            [sign_value[h["fold_sign"]] for h in doc["hinges"]],
            dtype=np.int8),
        design=design, material=material)
