"""Sparse LDL^T factorization with fill-reducing ordering, plus the Takahashi
recurrences for selected inversion.

The factorization is the classic up-looking algorithm driven by the
elimination tree; the factor pattern is exact (no dropping), which the
selected-inverse recursion relies on.  Intended for the moderately sized,
nearly 1-D systems arising from metric-graph meshes.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csc_matrix, csr_matrix, coo_matrix
from scipy.sparse.csgraph import reverse_cuthill_mckee


class NotSPDError(np.linalg.LinAlgError):
    def __init__(self, k):
        super().__init__(f"matrix is not positive definite (pivot {k} <= 0)")
        self.pivot_index = k


class SparseCholesky:
    """P A P^T = L D L^T with L unit lower triangular, D positive diagonal.

    Parameters
    ----------
    A : sparse matrix, symmetric positive definite
    order : "rcm" | "natural"
        Fill-reducing permutation (reverse Cuthill-McKee by default).
    extra_pattern : optional (rows, cols) arrays
        Structural zeros added to A's pattern before factorization; used to
        force entries into the factor pattern for selected inversion.
    """

    def __init__(self, A, order: str = "rcm", extra_pattern=None):
        A = csr_matrix(A)
        n = A.shape[0]
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        if extra_pattern is not None:
            r = np.asarray(extra_pattern[0], dtype=np.int64)
            c = np.asarray(extra_pattern[1], dtype=np.int64)
            co = A.tocoo()
            A = coo_matrix(
                (
                    np.concatenate([co.data, np.zeros(2 * len(r))]),
                    (
                        np.concatenate([co.row, r, c]),
                        np.concatenate([co.col, c, r]),
                    ),
                ),
                shape=A.shape,
            ).tocsr()  # sums duplicates, keeps structural zeros
        self.n = n
        if order == "rcm" and n > 1:
            perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True))
        else:
            perm = np.arange(n)
        self.perm = perm
        Ap = A[perm][:, perm].tocsc()
        Ap.sort_indices()
        self._factorize(Ap)

    # -- factorization ------------------------------------------------------

    def _factorize(self, A: csc_matrix):
        n = self.n
        indptr, indices, data = A.indptr, A.indices, A.data
        parent = np.full(n, -1, dtype=np.int64)
        flag = np.full(n, -1, dtype=np.int64)
        Lnz = np.zeros(n, dtype=np.int64)

        # symbolic: elimination tree and column counts
        for k in range(n):
            flag[k] = k
            for p in range(indptr[k], indptr[k + 1]):
                i = indices[p]
                if i < k:
                    while flag[i] != k:
                        if parent[i] == -1:
                            parent[i] = k
                        Lnz[i] += 1
                        flag[i] = k
                        i = parent[i]

        Lp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(Lnz, out=Lp[1:])
        Li = np.zeros(Lp[n], dtype=np.int64)
        Lx = np.zeros(Lp[n])
        D = np.zeros(n)
        Y = np.zeros(n)
        pattern = np.zeros(n, dtype=np.int64)
        lnz = np.zeros(n, dtype=np.int64)
        flag[:] = -1

        for k in range(n):
            top = n
            flag[k] = k
            dk = 0.0
            for p in range(indptr[k], indptr[k + 1]):
                i = indices[p]
                if i < k:
                    Y[i] += data[p]
                    length = 0
                    while flag[i] != k:
                        pattern[length] = i
                        length += 1
                        flag[i] = k
                        i = parent[i]
                    while length > 0:
                        top -= 1
                        length -= 1
                        pattern[top] = pattern[length]
                elif i == k:
                    dk = data[p]
            for t in range(top, n):
                j = pattern[t]
                yj = Y[j]
                Y[j] = 0.0
                p0, p1 = Lp[j], Lp[j] + lnz[j]
                Y[Li[p0:p1]] -= Lx[p0:p1] * yj
                lkj = yj / D[j]
                dk -= lkj * yj
                Li[p1] = k
                Lx[p1] = lkj
                lnz[j] += 1
            if dk <= 0.0 or not np.isfinite(dk):
                raise NotSPDError(k)
            D[k] = dk

        self.Lp, self.Li, self.Lx, self.D = Lp, Li, Lx, D
        # row-major view of L for the selected-inverse sweep
        Lcsr = csc_matrix((Lx, Li, Lp), shape=(n, n)).tocsr()
        Lcsr.sort_indices()
        self._row_ptr, self._row_idx = Lcsr.indptr, Lcsr.indices

    # -- solves ---------------------------------------------------------------

    def _forward(self, y):
        Lp, Li, Lx = self.Lp, self.Li, self.Lx
        for j in range(self.n):
            p0, p1 = Lp[j], Lp[j + 1]
            if p0 != p1:
                y[Li[p0:p1]] -= np.multiply.outer(Lx[p0:p1], y[j]) if y.ndim > 1 \
                    else Lx[p0:p1] * y[j]
        return y

    def _backward(self, y):
        Lp, Li, Lx = self.Lp, self.Li, self.Lx
        for j in range(self.n - 1, -1, -1):
            p0, p1 = Lp[j], Lp[j + 1]
            if p0 != p1:
                y[j] -= Lx[p0:p1] @ y[Li[p0:p1]]
        return y

    def solve(self, b):
        """A^{-1} b for a vector or a dense matrix of right-hand sides."""
        b = np.asarray(b, dtype=float)
        y = b[self.perm].copy()
        self._forward(y)
        if y.ndim > 1:
            y /= self.D[:, None]
        else:
            y /= self.D
        self._backward(y)
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def sample_backsolve(self, z):
        """x = P^T L^{-T} D^{-1/2} z, so that Cov(x) = A^{-1} for z ~ N(0, I)."""
        z = np.asarray(z, dtype=float)
        y = z / (np.sqrt(self.D)[:, None] if z.ndim > 1 else np.sqrt(self.D))
        y = y.copy()
        self._backward(y)
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def logdet(self) -> float:
        return float(np.sum(np.log(self.D)))

    # -- selected inversion (Takahashi equations) -----------------------------

    def selected_inverse(self):
        """Entries of A^{-1} on the factor pattern, as a dense matrix.

        Off-pattern entries of the returned matrix are NOT computed (left
        zero); the diagonal is always in the pattern.  Cost is proportional
        to the factorization cost, not to a dense inversion.
        """
        n = self.n
        Lp, Li, Lx, D = self.Lp, self.Li, self.Lx, self.D
        rp, ri = self._row_ptr, self._row_idx
        Z = np.zeros((n, n))
        for j in range(n - 1, -1, -1):
            p0, p1 = Lp[j], Lp[j + 1]
            rows = Li[p0:p1]
            Z[j, j] = 1.0 / D[j] - Lx[p0:p1] @ Z[rows, j]
            for i in ri[rp[j]:rp[j + 1]][::-1]:
                if i >= j:
                    continue
                q0, q1 = Lp[i], Lp[i + 1]
                v = -(Lx[q0:q1] @ Z[Li[q0:q1], j])
                Z[i, j] = v
                Z[j, i] = v
        return Z

    def selected_inverse_diag(self) -> np.ndarray:
        """diag(A^{-1}) via the Takahashi recurrences."""
        Z = self.selected_inverse()
        out = np.empty(self.n)
        out[self.perm] = np.diag(Z)
        return out

    def inverse_entries(self, rows, cols) -> np.ndarray:
        """Selected entries of A^{-1}; requested pairs must lie in the factor
        pattern (use extra_pattern at construction to force them in)."""
        Z = self.selected_inverse()
        inv = np.empty(self.n, dtype=np.int64)
        inv[self.perm] = np.arange(self.n)
        return Z[inv[np.asarray(rows)], inv[np.asarray(cols)]]
