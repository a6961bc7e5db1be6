"""P1 element matrices and dense assembly.

Vector fields use interleaved degrees of freedom ``(2 i, 2 i + 1)`` for node
``i``. Assembly runs over fixed-size element chunks; chunks may be computed on
several threads but their partial matrices are always summed in chunk order,
so the result does not depend on the thread count.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 64
SQRT_HALF = np.sqrt(0.5)


def p1_geometry(nodes, tri):
    """Areas ``(m,)`` and shape-function gradients ``(m, 3, 2)``."""
    p = nodes[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv = np.empty((len(tri), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    # grad N_a = J^{-T} grad_ref N_a
    grads = np.einsum("ak,mkj->maj", ref, inv)
    return 0.5 * det, grads


def strain_matrix(grads):
    """``(m, 3, 6)`` map to ``(eps_xx, eps_yy, sqrt(2) eps_xy)``.

    With this scaling ``|B u|^2 = eps : eps``.
    """
    m = grads.shape[0]
    B = np.zeros((m, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = SQRT_HALF * grads[:, :, 1]
    B[:, 2, 1::2] = SQRT_HALF * grads[:, :, 0]
    return B


def divergence_row(grads):
    """``(m, 6)`` element divergence operator."""
    return grads.reshape(grads.shape[0], 6)


def vector_dofs(tri):
    d = np.empty((len(tri), 6), dtype=np.int64)
    d[:, 0::2] = 2 * tri
    d[:, 1::2] = 2 * tri + 1
    return d


def _chunks(m):
    return [slice(s, min(s + CHUNK, m)) for s in range(0, m, CHUNK)]


def assemble(shape, row_dofs, col_dofs, element_fn, m, threads=1):
    """Sum element matrices ``element_fn(chunk_slice) -> (k, r, c)`` into a dense array."""

    def partial(sl):
        local = element_fn(sl)
        out = np.zeros(shape)
        r = row_dofs[sl]
        c = col_dofs[sl]
        np.add.at(out, (r[:, :, None], c[:, None, :]), local)
        return out

    chunks = _chunks(m)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(partial, chunks))
    else:
        parts = [partial(sl) for sl in chunks]
    total = np.zeros(shape)
    for part in parts:
        total += part
    return total


class P1Assembler:
    """Global P1 matrices of a :class:`Mesh` (all nodes, before clamping)."""

    def __init__(self, mesh, threads=1):
        self.mesh = mesh
        self.threads = max(1, int(threads))
        self.area, self.grads = p1_geometry(mesh.nodes, mesh.triangles)
        self.B = strain_matrix(self.grads)
        self.D = divergence_row(self.grads)
        self.vdofs = vector_dofs(mesh.triangles)
        self.sdofs = np.asarray(mesh.triangles)
        self.n = mesh.n_nodes

    def _vv(self, fn):
        return assemble((2 * self.n, 2 * self.n), self.vdofs, self.vdofs, fn,
                        len(self.area), self.threads)

    def strain_gram(self):
        """``int eps(u) : eps(v)``."""
        return self._vv(lambda s: self.area[s, None, None]
                        * np.einsum("mki,mkj->mij", self.B[s], self.B[s]))

    def divergence_gram(self):
        """``int div u div v``."""
        return self._vv(lambda s: self.area[s, None, None]
                        * np.einsum("mi,mj->mij", self.D[s], self.D[s]))

    def laplace(self):
        """Scalar ``int grad y . grad z``."""
        return assemble((self.n, self.n), self.sdofs, self.sdofs,
                        lambda s: self.area[s, None, None]
                        * np.einsum("mak,mbk->mab", self.grads[s], self.grads[s]),
                        len(self.area), self.threads)

    def div_scalar_coupling(self):
        """``Z[dof, node] = int psi_node div phi_dof``."""
        return assemble((2 * self.n, self.n), self.vdofs, self.sdofs,
                        lambda s: (self.area[s, None, None] / 3.0)
                        * np.repeat(self.D[s][:, :, None], 3, axis=2),
                        len(self.area), self.threads)

    def lumped_mass(self):
        """Scalar nodal masses ``sum area / 3``."""
        out = np.zeros(self.n)
        np.add.at(out, self.sdofs, np.repeat(self.area[:, None] / 3.0, 3, axis=1))
        return out

    def element_strain(self, u_full):
        """Element strains ``(m, 3)`` of a full interleaved displacement array."""
        return np.einsum("mij,mj->mi", self.B, u_full[self.vdofs])

    def nodal_average(self, elem_values):
        """Area-weighted average of element values at the nodes."""
        num = np.zeros(self.n)
        den = np.zeros(self.n)
        w = np.repeat(self.area[:, None], 3, axis=1)
        np.add.at(num, self.sdofs, w * elem_values[:, None])
        np.add.at(den, self.sdofs, w)
        return num / den


def edge_lengths(nodes, edges):
    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def boundary_lumped_mass(nodes, edges, n_nodes):
    """Nodal boundary masses: half of each incident edge length."""
    out = np.zeros(n_nodes)
    L = edge_lengths(nodes, edges)
    np.add.at(out, edges[:, 0], 0.5 * L)
    np.add.at(out, edges[:, 1], 0.5 * L)
    return out

