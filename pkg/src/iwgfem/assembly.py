"""Global DOF management and assembly of the coupled CG / immersed WG system.

Unknowns: Lagrange P_k node values on non-interface elements, m_k interior
coefficients per interface element, and k Legendre trace coefficients per
edge of the interface band that is neither slaved nor on the boundary. On a
coupling edge the trace is slaved to the projection of the neighboring CG
trace; on boundary edges both CG nodes and WG traces are pinned to the
Dirichlet data. Slaving and pinning are folded congruently, so the reduced
matrix stays symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from iwgfem.geometry import INTERFACE, OMEGA1, OMEGA2, _triangle_rule_reference
from iwgfem.ife import LocalIfeSpace, construct_ife_basis, edge_legendre, load_vector
from iwgfem.mesh import EDGE_COUPLING, EDGE_WG_INTERIOR, MeshPartition


class AssemblyError(Exception):
    pass


class InconsistentConstraint(AssemblyError):
    """A DOF is simultaneously slaved and pinned with conflicting values."""


TRACE_NONE = -1
TRACE_SLAVED = -2


@dataclass(eq=False)
class DofMap:
    """Column layout: free unknowns first, Dirichlet-pinned columns after.

    node_col[n] is the column of node n (vertex id, or n_vertices + edge id
    for k = 2 midpoints), -1 if the node carries no CG unknown. trace_col[e]
    is the first of k columns for edge e's trace block, TRACE_SLAVED on
    coupling edges. coupling[e] holds (node ids on e, k x (k+1) projection
    of the CG trace onto the edge's Legendre basis).
    """

    k: int
    m: int
    n_free: int
    n_total: int
    node_col: np.ndarray
    wg0_col: dict
    trace_col: np.ndarray
    coupling: dict
    pinned_nodes: np.ndarray  # node ids in pinned column order
    pinned_trace_edges: np.ndarray  # edge ids of pinned trace blocks, in order
    node_coords: np.ndarray  # (n_nodes, 2) coordinates of every CG node

    def is_pinned(self, col: int) -> bool:
        return col >= self.n_free


def _cg_shape_values(k: int, ref_pts: np.ndarray) -> np.ndarray:
    """P_k Lagrange shape functions at reference-triangle points, (n, nl)."""
    lam0 = 1.0 - ref_pts[:, 0] - ref_pts[:, 1]
    lam1 = ref_pts[:, 0]
    lam2 = ref_pts[:, 1]
    if k == 1:
        return np.column_stack([lam0, lam1, lam2])
    return np.column_stack(
        [
            lam0 * (2 * lam0 - 1),
            lam1 * (2 * lam1 - 1),
            lam2 * (2 * lam2 - 1),
            4 * lam0 * lam1,
            4 * lam1 * lam2,
            4 * lam2 * lam0,
        ]
    )


def _cg_shape_grads(k: int, ref_pts: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients of the P_k shapes, (n, nl, 2)."""
    n = len(ref_pts)
    lam0 = 1.0 - ref_pts[:, 0] - ref_pts[:, 1]
    lam1 = ref_pts[:, 0]
    lam2 = ref_pts[:, 1]
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    if k == 1:
        out = np.empty((n, 3, 2))
        out[:, 0] = g0
        out[:, 1] = g1
        out[:, 2] = g2
        return out
    out = np.empty((n, 6, 2))
    out[:, 0] = (4 * lam0 - 1)[:, None] * g0
    out[:, 1] = (4 * lam1 - 1)[:, None] * g1
    out[:, 2] = (4 * lam2 - 1)[:, None] * g2
    out[:, 3] = 4 * (lam1[:, None] * g0 + lam0[:, None] * g1)
    out[:, 4] = 4 * (lam2[:, None] * g1 + lam1[:, None] * g2)
    out[:, 5] = 4 * (lam0[:, None] * g2 + lam2[:, None] * g0)
    return out


def element_nodes(mesh: MeshPartition, t: int, k: int) -> np.ndarray:
    """Global node ids of element t: vertices, then edge midpoints for k = 2."""
    tri = mesh.triangles[t]
    if k == 1:
        return tri.copy()
    return np.concatenate([tri, mesh.n_vertices + mesh.tri_edges[t]])


def edge_nodes(mesh: MeshPartition, e: int, k: int) -> np.ndarray:
    """Node ids on edge e in canonical order: endpoints (ascending), midpoint."""
    a, b = mesh.edges[e]
    if k == 1:
        return np.array([a, b])
    return np.array([a, b, mesh.n_vertices + e])


def _edge_lagrange_1d(k: int, t: np.ndarray) -> np.ndarray:
    """1D restrictions of the P_k shapes on an edge, parametrized a -> b."""
    if k == 1:
        return np.column_stack([1.0 - t, t])
    return np.column_stack([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)])


def cg_element_stiffness(tri, k: int, a: float = 1.0, degree: int | None = None) -> np.ndarray:
    """Single-element P_k stiffness block a * (grad psi_i, grad psi_j)_T."""
    tri = np.asarray(tri, float)
    if degree is None:
        degree = 2 * k
    ref, w = _triangle_rule_reference(degree)
    jm = np.array([tri[1] - tri[0], tri[2] - tri[0]])
    det = abs(jm[0, 0] * jm[1, 1] - jm[0, 1] * jm[1, 0])
    g_phys = _cg_shape_grads(k, ref) @ np.linalg.inv(jm).T
    return a * np.einsum("nid,n,njd->ij", g_phys, w * det, g_phys)


def build_dof_map(mesh: MeshPartition, k: int) -> DofMap:
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    m = (k + 1) * (k + 2) // 2
    nv = mesh.n_vertices
    n_nodes = nv + (mesh.n_edges if k == 2 else 0)

    node_coords = mesh.vertices
    if k == 2:
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        node_coords = np.vstack([mesh.vertices, mids])

    active = np.zeros(n_nodes, dtype=bool)
    for t in range(mesh.n_triangles):
        if mesh.element_class[t] != INTERFACE:
            active[element_nodes(mesh, t, k)] = True

    on_boundary = np.zeros(n_nodes, dtype=bool)
    for e in mesh.boundary_edges():
        a, b = mesh.edges[e]
        on_boundary[a] = on_boundary[b] = True
        if k == 2:
            on_boundary[nv + e] = True

    node_col = np.full(n_nodes, -1, dtype=np.int64)
    free = 0
    for n in range(n_nodes):
        if active[n] and not on_boundary[n]:
            node_col[n] = free
            free += 1
    wg0_col = {}
    for t in mesh.interface_elements():
        wg0_col[int(t)] = free
        free += m
    trace_col = np.full(mesh.n_edges, TRACE_NONE, dtype=np.int64)
    interior_wg = []
    boundary_wg = []
    for e in range(mesh.n_edges):
        cls = mesh.edge_class[e]
        if cls == EDGE_COUPLING:
            if mesh.edge_tris[e, 1] < 0:
                raise InconsistentConstraint(f"coupling edge {e} on the boundary")
            trace_col[e] = TRACE_SLAVED
        elif cls == EDGE_WG_INTERIOR:
            if mesh.edge_tris[e, 1] < 0:
                boundary_wg.append(e)
            else:
                interior_wg.append(e)
    for e in interior_wg:
        trace_col[e] = free
        free += k

    n_free = free
    col = n_free
    pinned_nodes = []
    for n in range(n_nodes):
        if active[n] and on_boundary[n]:
            node_col[n] = col
            pinned_nodes.append(n)
            col += 1
    for e in boundary_wg:
        trace_col[e] = col
        col += k

    coupling = {}
    deg = max(2 * k, 3)
    xg, wg = np.polynomial.legendre.leggauss((deg + 2) // 2 + 1)
    tg = 0.5 * (xg + 1.0)
    for e in np.flatnonzero(mesh.edge_class == EDGE_COUPLING):
        a, b = mesh.edges[e]
        p0, p1 = mesh.vertices[a], mesh.vertices[b]
        ell = float(np.linalg.norm(p1 - p0))
        pts = p0 + np.outer(tg, p1 - p0)
        leg = edge_legendre(p0, p1, k)(pts)
        lag = _edge_lagrange_1d(k, tg)
        c = leg.T @ ((0.5 * ell * wg)[:, None] * lag)  # (k, k+1)
        coupling[int(e)] = (edge_nodes(mesh, e, k), c)

    return DofMap(
        k=k,
        m=m,
        n_free=n_free,
        n_total=col,
        node_col=node_col,
        wg0_col=wg0_col,
        trace_col=trace_col,
        coupling=coupling,
        pinned_nodes=np.array(pinned_nodes, dtype=np.int64),
        pinned_trace_edges=np.array(boundary_wg, dtype=np.int64),
        node_coords=node_coords,
    )


@dataclass(eq=False)
class CgContributions:
    """Batched non-interface blocks: shared local matrices per diagonal orientation."""

    elements: np.ndarray  # element ids
    nodes: np.ndarray  # (ne, nl) global node ids
    stiffness: np.ndarray  # (ne, nl, nl)
    load: np.ndarray  # (ne, nl)


@dataclass(eq=False)
class WgContribution:
    element: int
    space: LocalIfeSpace
    stiffness: np.ndarray  # (m + 3k, m + 3k)
    load: np.ndarray  # (m + 3k,), zeros on trace slots


def assemble_noninterface(mesh: MeshPartition, k: int, coeff, f, quad_offset: int = 0) -> CgContributions:
    """Stiffness (A grad u, grad v)_T and load (f, v)_T on non-interface elements.

    coeff maps a side (OMEGA1/OMEGA2) to its conductivity. The geometry is
    uniform (two congruent shapes), so reference blocks are built once and
    scaled per element.
    """
    ids = np.flatnonzero(mesh.element_class != INTERFACE)
    nl = 3 if k == 1 else 6
    if len(ids) == 0:
        return CgContributions(ids, np.zeros((0, nl), np.int64), np.zeros((0, nl, nl)), np.zeros((0, nl)))

    stiff_deg = 2 * k + quad_offset
    load_deg = 2 * k + 2 + quad_offset
    ref_s, w_s = _triangle_rule_reference(stiff_deg)
    ref_l, w_l = _triangle_rule_reference(load_deg)
    shapes_l = _cg_shape_values(k, ref_l)

    v0 = mesh.vertices[mesh.triangles[ids, 0]]
    j_mats = np.stack(
        [
            mesh.vertices[mesh.triangles[ids, 1]] - v0,
            mesh.vertices[mesh.triangles[ids, 2]] - v0,
        ],
        axis=1,
    )  # (ne, 2, 2): rows are edge vectors
    dets = j_mats[:, 0, 0] * j_mats[:, 1, 1] - j_mats[:, 0, 1] * j_mats[:, 1, 0]

    # Orientation classes: elements sharing the same Jacobian reuse one block.
    keys = np.round(j_mats.reshape(len(ids), 4), 14)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    grads_ref = _cg_shape_grads(k, ref_s)
    stiff = np.empty((len(ids), nl, nl))
    for cls in np.unique(inv):
        sel = np.flatnonzero(inv == cls)
        jm = j_mats[sel[0]]
        det = dets[sel[0]]
        # Rows of jm are the edge vectors, so dx/dxi = jm.T and physical
        # gradients are inv(jm).T applied to reference gradients.
        jinv_t = np.linalg.inv(jm).T
        g_phys = grads_ref @ jinv_t  # (n, nl, 2)
        block = np.einsum("nid,n,njd->ij", g_phys, w_s * abs(det), g_phys)
        stiff[sel] = block
    a_vals = np.where(mesh.element_class[ids] == OMEGA1, coeff[OMEGA1], coeff[OMEGA2])
    stiff *= a_vals[:, None, None]

    pts = v0[:, None, :] + ref_l[None, :, :] @ j_mats  # (ne, n, 2)
    fv = np.asarray(f(pts[..., 0].ravel(), pts[..., 1].ravel()), float).reshape(len(ids), -1)
    load = np.einsum("en,n,nj->ej", fv, w_l, shapes_l) * np.abs(dets)[:, None]

    nodes = np.array([element_nodes(mesh, int(t), k) for t in ids], dtype=np.int64)
    return CgContributions(ids, nodes, stiff, load)


def build_cut_geometries(mesh: MeshPartition, k: int, quad_degree: int | None = None) -> dict:
    """Pair-independent cut-element geometry, shareable across coefficient pairs."""
    from iwgfem.ife import build_cut_geometry

    out = {}
    for t, cut in mesh.cuts.items():
        edge_pts = []
        for i in range(3):
            e = mesh.tri_edges[t, i]
            a, b = mesh.edges[e]
            edge_pts.append((mesh.vertices[a], mesh.vertices[b]))
        out[t] = build_cut_geometry(cut, k, quad_degree, edge_pts)
    return out


def build_ife_spaces(
    mesh: MeshPartition,
    k: int,
    a1: float,
    a2: float,
    mode: str = "segment",
    quad_degree: int | None = None,
    geometries: dict | None = None,
) -> dict[int, LocalIfeSpace]:
    """Construct the local immersed space on every interface element."""
    if geometries is None:
        geometries = build_cut_geometries(mesh, k, quad_degree)
    spaces = {}
    for t, cut in mesh.cuts.items():
        spaces[t] = construct_ife_basis(
            cut, a1, a2, k, mode=mode, quad_degree=quad_degree, element_id=t,
            geometry=geometries[t],
        )
    return spaces


def assemble_interface(mesh: MeshPartition, spaces: dict, k: int, f) -> list[WgContribution]:
    """Weak-gradient stiffness + stabilizer blocks and interior-tested loads."""
    out = []
    for t in sorted(spaces):
        space = spaces[t]
        load = np.zeros(space.n_local)
        load[: space.m] = load_vector(space, f)
        out.append(WgContribution(element=t, space=space, stiffness=space.stiffness, load=load))
    return out


@dataclass(eq=False)
class GlobalSystem:
    """Reduced SPD system plus the data needed to reconstruct all coefficients."""

    matrix: sp.csr_matrix  # free x free
    rhs: np.ndarray
    dofmap: DofMap
    pinned_values: np.ndarray
    asymmetry: float

    def full_coefficients(self, x_free: np.ndarray) -> np.ndarray:
        return np.concatenate([x_free, self.pinned_values])


def _wg_local_map(dofmap: DofMap, mesh: MeshPartition, t: int):
    """Affine routing of local WG slots to global columns: list of (cols, weights)."""
    k, m = dofmap.k, dofmap.m
    rows = []
    base = dofmap.wg0_col[int(t)]
    for i in range(m):
        rows.append((np.array([base + i]), np.array([1.0])))
    for i in range(3):
        e = int(mesh.tri_edges[t, i])
        tc = dofmap.trace_col[e]
        if tc == TRACE_SLAVED:
            nodes, c = dofmap.coupling[e]
            cols = dofmap.node_col[nodes]
            if np.any(cols < 0):
                raise InconsistentConstraint(f"slaved edge {e} touches an inactive CG node")
            for j in range(k):
                rows.append((cols.copy(), c[j].copy()))
        elif tc >= 0:
            for j in range(k):
                rows.append((np.array([tc + j]), np.array([1.0])))
        else:
            raise InconsistentConstraint(f"edge {e} of interface element {t} has no trace dofs")
    return rows


def apply_constraints(
    mesh: MeshPartition,
    dofmap: DofMap,
    cg: CgContributions,
    wg: list[WgContribution],
    g,
) -> GlobalSystem:
    """Fold slaved traces into CG unknowns, lift Dirichlet data, reduce to SPD form."""
    n = dofmap.n_total
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    if len(cg.elements):
        cg_cols = dofmap.node_col[cg.nodes]  # (ne, nl)
        if np.any(cg_cols < 0):
            raise AssemblyError("non-interface element references an inactive node")
        nl = cg_cols.shape[1]
        r = np.repeat(cg_cols[:, :, None], nl, axis=2)
        c = np.repeat(cg_cols[:, None, :], nl, axis=1)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(cg.stiffness.ravel())
        np.add.at(rhs, cg_cols.ravel(), cg.load.ravel())

    for contrib in wg:
        routing = _wg_local_map(dofmap, mesh, contrib.element)
        n_loc = len(routing)
        for i in range(n_loc):
            ci, wi = routing[i]
            rhs[ci] += wi * contrib.load[i]
            for j in range(n_loc):
                cj, wj = routing[j]
                kij = contrib.stiffness[i, j]
                if kij == 0.0:
                    continue
                block = np.outer(wi, wj) * kij
                rows.append(np.repeat(ci, len(cj)))
                cols.append(np.tile(cj, len(ci)))
                vals.append(block.ravel())

    k_all = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()

    pinned = np.zeros(n - dofmap.n_free)
    for i, node in enumerate(dofmap.pinned_nodes):
        x, y = dofmap.node_coords[node]
        pinned[i] = g(x, y)
    off = len(dofmap.pinned_nodes)
    from iwgfem.ife import project_qb

    for e in dofmap.pinned_trace_edges:
        a, b = mesh.edges[e]
        coeffs = project_qb(g, mesh.vertices[a], mesh.vertices[b], dofmap.k, mesh.interface)
        pinned[off : off + dofmap.k] = coeffs
        off += dofmap.k

    nf = dofmap.n_free
    k_ff = k_all[:nf, :nf]
    k_fp = k_all[:nf, nf:]
    b = rhs[:nf] - k_fp @ pinned

    asym_mat = (k_ff - k_ff.T).tocoo()
    scale = max(np.abs(k_ff.data).max(), 1e-300) if k_ff.nnz else 1.0
    asym = float(np.abs(asym_mat.data).max() / scale) if asym_mat.nnz else 0.0
    return GlobalSystem(
        matrix=k_ff, rhs=b, dofmap=dofmap, pinned_values=pinned, asymmetry=asym
    )


def assemble_system(
    mesh: MeshPartition,
    k: int,
    a1: float,
    a2: float,
    f,
    g,
    mode: str = "segment",
    quad_degree: int | None = None,
    quad_offset: int = 0,
    spaces: dict | None = None,
    geometries: dict | None = None,
):
    """Convenience pipeline: dof map, both assemblies, constraint folding."""
    if spaces is None:
        spaces = build_ife_spaces(
            mesh, k, a1, a2, mode=mode, quad_degree=quad_degree, geometries=geometries
        )
    dofmap = build_dof_map(mesh, k)
    cg = assemble_noninterface(mesh, k, {OMEGA1: a1, OMEGA2: a2}, f, quad_offset)
    wg = assemble_interface(mesh, spaces, k, f)
    system = apply_constraints(mesh, dofmap, cg, wg, g)
    return system, spaces


def wg_local_solution(
    mesh: MeshPartition, dofmap: DofMap, x_all: np.ndarray, t: int
) -> np.ndarray:
    """Local WG dof vector (interior + per-edge traces) of the solved function."""
    routing = _wg_local_map(dofmap, mesh, t)
    return np.array([float(w @ x_all[c]) for c, w in routing])


def dump_matrix(system: GlobalSystem, path) -> None:
    """Coordinate text format: row col value, one entry per line."""
    coo = system.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} x {coo.shape[1]}, {coo.nnz} entries\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
