"""Assembly of FEM matrices on a meshed metric graph.

All matrices are built from per-segment element contributions of the linear
hat basis.  Kirchhoff vertex conditions are the natural conditions of the
bilinear form: they are imposed implicitly by sharing one global node per
vertex and performing no boundary elimination.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .mesh import Mesh


class AssumptionError(ValueError):
    """Coefficient function violates the positivity assumption."""


def _from_accumulator(acc: dict, n: int) -> csr_matrix:
    """Build an exactly symmetric CSR from {(i<=j): value} accumulation."""
    rows, cols, vals = [], [], []
    for (i, j), v in acc.items():
        rows.append(i)
        cols.append(j)
        vals.append(v)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(v)
    m = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    return m


def _scatter(mesh: Mesh, local) -> csr_matrix:
    acc: dict = {}
    for i, j, h in mesh.segments():
        e = local(h)
        for a, ga in ((0, i), (1, j)):
            for b, gb in ((0, i), (1, j)):
                if ga > gb:
                    continue  # accumulate one triangle; mirrored on emit
                key = (ga, gb)
                acc[key] = acc.get(key, 0.0) + e[a][b]
    return _from_accumulator(acc, mesh.N)


def assemble_mass(mesh: Mesh) -> csr_matrix:
    """Consistent mass matrix C with C_ij = (psi_i, psi_j).  Cached per mesh."""
    if "mass" not in mesh.matrix_cache:
        mesh.matrix_cache["mass"] = _scatter(
            mesh, lambda h: ((h / 3.0, h / 6.0), (h / 6.0, h / 3.0)))
    return mesh.matrix_cache["mass"]


def assemble_stiffness(mesh: Mesh) -> csr_matrix:
    """Stiffness matrix G with G_ij = (psi_i', psi_j'); G @ 1 = 0.  Cached."""
    if "stiffness" not in mesh.matrix_cache:
        mesh.matrix_cache["stiffness"] = _scatter(
            mesh, lambda h: ((1.0 / h, -1.0 / h), (-1.0 / h, 1.0 / h)))
    return mesh.matrix_cache["stiffness"]


def lump_mass(C: csr_matrix) -> np.ndarray:
    """Lumped mass diagonal: row sums of C (the nodal control lengths)."""
    d = np.asarray(C.sum(axis=1)).ravel()
    if np.any(d <= 0):
        raise ValueError("lumped mass has nonpositive entries")
    return d


def coefficient_at_nodes(mesh: Mesh, func) -> np.ndarray:
    """Evaluate a coefficient (scalar, array of node values, or callable of
    GraphPoint) at all mesh nodes."""
    if callable(func):
        vals = np.array([func(p) for p in mesh.node_points()], dtype=float)
    else:
        vals = np.asarray(func, dtype=float)
        if vals.ndim == 0:
            vals = np.full(mesh.N, float(vals))
    if vals.shape != (mesh.N,):
        raise ValueError(f"coefficient has shape {vals.shape}, expected ({mesh.N},)")
    if not np.all(np.isfinite(vals)):
        raise AssumptionError("coefficient is not finite at every node")
    return vals


def positive_coefficient(mesh: Mesh, func, name: str) -> np.ndarray:
    vals = coefficient_at_nodes(mesh, func)
    if np.min(vals) <= 0:
        raise AssumptionError(
            f"Assumption 1 violated: {name} must be bounded below by a "
            f"positive constant (min sampled value {np.min(vals):g})"
        )
    return vals


def kappa_mass_diagonal(mesh: Mesh, kappa) -> np.ndarray:
    """Diagonal of the lumped kappa-weighted mass: kappa(s_i)^2 * Ctilde_ii."""
    k = positive_coefficient(mesh, kappa, "kappa")
    return k**2 * lump_mass(assemble_mass(mesh))


def assemble_kappa_mass(mesh: Mesh, kappa) -> csr_matrix:
    """Consistent C^kappa with entries (kappa^2 psi_i, psi_j).

    kappa^2 is integrated per segment by 2-point Gauss quadrature with kappa
    linearly interpolated from its nodal values; validation path only.
    """
    k = positive_coefficient(mesh, kappa, "kappa")
    gp = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
    acc: dict = {}
    for i, j, h in mesh.segments():
        for t in gp:
            k2 = (k[i] * (1 - t) + k[j] * t) ** 2
            phi = (1 - t, t)
            for a, ga in ((0, i), (1, j)):
                for b, gb in ((0, i), (1, j)):
                    if ga > gb:
                        continue
                    key = (ga, gb)
                    acc[key] = acc.get(key, 0.0) + 0.5 * h * k2 * phi[a] * phi[b]
    return _from_accumulator(acc, mesh.N)


def operator_matrix(mesh: Mesh, kappa, lumped: bool = True):
    """Discrete operator L and the mass used with it.

    Default (lumped) path: L = G + diag(kappa^2) Ctilde with Ctilde the lumped
    mass; returns (L, Ctilde diagonal as 1-D array).  Consistent path:
    L = G + C^kappa; returns (L, C) with C the consistent mass matrix.
    """
    G = assemble_stiffness(mesh)
    if lumped:
        d = kappa_mass_diagonal(mesh, kappa)
        L = G + csr_matrix((d, (range(mesh.N), range(mesh.N))), shape=G.shape)
        return L.tocsr(), lump_mass(assemble_mass(mesh))
    L = G + assemble_kappa_mass(mesh, kappa)
    return L.tocsr(), assemble_mass(mesh)


def dump_coordinate_format(matrix, path):
    """Write a sparse/dense matrix as (i, j, value) text, 17 significant digits."""
    m = csr_matrix(matrix).tocoo()
    with open(path, "w") as f:
        for i, j, v in zip(m.row, m.col, m.data):
            f.write(f"{i} {j} {v:.17g}\n")
