"""The Rumin contact complex of the model, built from the assembled de Rham blocks.

The order-(-1) coefficient of d_eps - delta_eps,

    a_{-1} = [[0, L], [-L*, 0]],

is a pointwise (derivative-free) skew endomorphism whose kernel carries the
Rumin bundle; its fibers are constant over the grid for this model, so the
projector, the generalized inverse, and the orthonormal bundle bases are
computed once on the 8-dimensional total fiber and lifted to fields.

Operators (all restricted to the Rumin bundle, fibers of dimension 1, 2, 2, 1):

    d_H  : degrees 0 -> 1 and 2 -> 3, first order,
    D_H  : degree 1 -> 2, second order, assembled as  Pi d (Id - a_{-1}^+ d) Pi,
    Laplacians per degree: delta d, (d delta)^2 + D* D, (delta d)^2 + D D*, d delta.

The second-order differential uses the canonical lift: a horizontal 1-form
alpha is corrected by the theta-component that cancels the horizontal part of
d(alpha), which is exactly what a_{-1}^+ composed with d implements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import null_space, svd

from .derham import (FIBER_DIMS, DerhamComplex, herm, op_abs_max, submatrix,
                     to_dense)

FIBER_OFFSETS = np.concatenate([[0], np.cumsum(FIBER_DIMS)])  # 0,1,4,7,8
RUMIN_FIBER_DIMS = (1, 2, 2, 1)


class RankInstabilityError(ValueError):
    """Singular values fell inside the guard band around the rank tolerance."""


def constant_block_value(block, dim: int, tol: float = 1e-12) -> complex:
    """Value of a multiplication-by-constant block; verifies it is scalar x Id."""
    B = block.tocsr() if sparse.issparse(block) else np.asarray(block)
    diag = B.diagonal()
    lam = complex(np.mean(diag))
    eye = sparse.identity(dim, format="csr", dtype=complex) if sparse.issparse(B) \
        else np.eye(dim, dtype=complex)
    resid = op_abs_max(B - lam * eye)
    if resid > tol * max(1.0, abs(lam)):
        raise ValueError(f"block is not a constant multiple of the identity: residual {resid:.3e}")
    return lam


def extract_total_fiber(dc: DerhamComplex, A, tol: float = 1e-12) -> np.ndarray:
    """Constant 8x8 fiber matrix of a pointwise graded operator.

    Verifies every component block is scalar x identity, which certifies that
    the operator has no derivative content (it commutes with multiplication
    by sampled coordinate fields).
    """
    dim = dc.dim
    F = np.zeros((8, 8), dtype=complex)
    Ad = A.tocsr() if sparse.issparse(A) else np.asarray(A)
    for qo in range(4):
        for qi in range(4):
            blk = submatrix(Ad, np.arange(dc.offsets[qo], dc.offsets[qo + 1]),
                            np.arange(dc.offsets[qi], dc.offsets[qi + 1]))
            for a in range(FIBER_DIMS[qo]):
                for b in range(FIBER_DIMS[qi]):
                    sub = submatrix(blk, np.arange(a * dim, (a + 1) * dim),
                                    np.arange(b * dim, (b + 1) * dim))
                    F[FIBER_OFFSETS[qo] + a, FIBER_OFFSETS[qi] + b] = \
                        constant_block_value(sub, dim, tol)
    return F


def lift_fiber(dc: DerhamComplex, F: np.ndarray):
    """Lift an 8x8 fiber matrix to the graded field space (fiber x identity)."""
    blocks = {}
    for qo in range(4):
        for qi in range(4):
            sub = F[FIBER_OFFSETS[qo]:FIBER_OFFSETS[qo + 1],
                    FIBER_OFFSETS[qi]:FIBER_OFFSETS[qi + 1]]
            if np.any(sub != 0):
                if dc._sp:
                    blocks[(qo, qi)] = sparse.kron(sparse.csr_matrix(sub),
                                                   sparse.identity(dc.dim, dtype=complex),
                                                   format="csr")
                else:
                    blocks[(qo, qi)] = np.kron(sub, np.eye(dc.dim, dtype=complex))
    return dc.graded(blocks)


def _snap_to_components(basis: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Replace a nullspace basis by unit component vectors when the span allows it."""
    P = basis @ basis.conj().T
    hits = [i for i in range(P.shape[0]) if abs(P[i, i] - 1.0) < tol]
    if len(hits) == basis.shape[1]:
        E = np.zeros_like(basis)
        for col, i in enumerate(hits):
            E[i, col] = 1.0
        return E
    return basis


@dataclass
class FiberReport:
    """Rank data of the fiberwise SVD of a_{-1}: singular values, rank, guard gap."""
    singular_values: np.ndarray
    rank: int
    tol: float
    gap: float  # smallest kept / largest dropped singular value ratio


def fiber_pseudo_inverse(F: np.ndarray, rank_rtol: float = 1e-10) -> tuple[np.ndarray, FiberReport]:
    """Generalized inverse of the constant fiber of a_{-1}, with rank guards."""
    U, s, Vh = svd(F)
    tol = rank_rtol * (s[0] if s.size else 1.0)
    keep = s > tol
    in_band = np.any((s > tol / 10.0) & (s < tol * 10.0) & ~np.isclose(s, 0.0))
    if in_band:
        raise RankInstabilityError(f"singular values near rank tolerance {tol:.3e}: {s}")
    rank = int(np.sum(keep))
    dropped = s[~keep]
    gap = float(s[keep][-1] / max(dropped.max(), tol)) if rank and dropped.size else np.inf
    sinv = np.zeros_like(s)
    sinv[keep] = 1.0 / s[keep]
    Fdag = (Vh.conj().T * sinv) @ U.conj().T
    return Fdag, FiberReport(singular_values=s, rank=rank, tol=tol, gap=gap)


class RuminComplex:
    """Rumin bundle bases, projectors, differentials, and Laplacians."""

    def __init__(self, dc: DerhamComplex, rank_rtol: float = 1e-10):
        self.dc = dc
        from .derham import laurent_coefficients  # deferred: same-module family
        self.a = laurent_coefficients(dc)
        self.fiber_a = extract_total_fiber(dc, self.a[-1])
        if op_abs_max_arr(self.fiber_a + self.fiber_a.conj().T) > 1e-13:
            raise AssertionError("a_{-1} fiber is not skew-Hermitian")
        self.fiber_adag, self.fiber_report = fiber_pseudo_inverse(self.fiber_a, rank_rtol)
        self.fiber_proj = np.eye(8) - self.fiber_adag @ self.fiber_a
        self.adag = lift_fiber(dc, self.fiber_adag)
        self.proj = lift_fiber(dc, self.fiber_proj)
        self.fiber_bases = {}
        for p in range(4):
            cols = slice(FIBER_OFFSETS[p], FIBER_OFFSETS[p + 1])
            K = self.fiber_a[:, cols]
            B = null_space(K, rcond=rank_rtol)
            if B.shape[1] != RUMIN_FIBER_DIMS[p]:
                raise RankInstabilityError(
                    f"degree {p}: kernel rank {B.shape[1]} != expected {RUMIN_FIBER_DIMS[p]}")
            self.fiber_bases[p] = _snap_to_components(B)
        self.basis = {p: self._lift_basis(p) for p in range(4)}
        self._build_operators()

    # -- bases ---------------------------------------------------------------

    def _lift_basis(self, p: int):
        B = self.fiber_bases[p]
        if self.dc._sp:
            return sparse.kron(sparse.csr_matrix(B),
                               sparse.identity(self.dc.dim, dtype=complex), format="csr")
        return np.kron(B, np.eye(self.dc.dim, dtype=complex))

    def rumin_dim(self, p: int) -> int:
        return RUMIN_FIBER_DIMS[p] * self.dc.dim

    def projector(self, p: int):
        """Pointwise orthogonal projector onto the degree-p Rumin bundle (ambient)."""
        B = self.basis[p]
        return B @ herm(B)

    # -- differentials ---------------------------------------------------------

    def _build_operators(self):
        dc = self.dc
        B0, B1, B2, B3 = (self.basis[p] for p in range(4))
        self.d0 = herm(B1) @ dc.d[0] @ B0
        self.d2 = herm(B3) @ dc.d[2] @ B2
        # a_{-1}^+ block mapping degree 2 to degree 1 (the only one feeding the lift)
        adag_12 = self._graded_block(self.adag, 1, 2)
        eye1 = sparse.identity(dc.dims[1], format="csr", dtype=complex) if dc._sp \
            else np.eye(dc.dims[1], dtype=complex)
        lift = eye1 - adag_12 @ dc.d[1]
        self.D = herm(B2) @ dc.d[1] @ lift @ B1

    def _graded_block(self, A, qo: int, qi: int):
        rows = np.arange(self.dc.offsets[qo], self.dc.offsets[qo + 1])
        cols = np.arange(self.dc.offsets[qi], self.dc.offsets[qi + 1])
        return submatrix(A, rows, cols)

    def d_rumin(self, p: int):
        """First-order Rumin differential; degrees 0 and 2 only."""
        if p == 0:
            return self.d0
        if p == 2:
            return self.d2
        raise ValueError(f"d_H is first order only outside middle source degrees; got p={p}")

    def D_rumin(self):
        """Second-order Rumin differential on middle degrees (1 -> 2)."""
        return self.D

    def laplacian(self, p: int):
        """Rumin Hodge Laplacian: order 2 off middle, order 4 in middle degrees."""
        if p == 0:
            return herm(self.d0) @ self.d0
        if p == 3:
            return self.d2 @ herm(self.d2)
        if p == 1:
            half = self.d0 @ herm(self.d0)
            return half @ half + herm(self.D) @ self.D
        if p == 2:
            half = herm(self.d2) @ self.d2
            return half @ half + self.D @ herm(self.D)
        raise ValueError(f"degree must be in 0..3, got {p}")

    def half_laplacian(self, p: int):
        """delta_H d_H on degree p in {0, 3}-adjacent positions (spectral pairing tests)."""
        if p == 0:
            return herm(self.d0) @ self.d0
        if p == 1:
            return self.d0 @ herm(self.d0)
        if p == 2:
            return herm(self.d2) @ self.d2
        if p == 3:
            return self.d2 @ herm(self.d2)
        raise ValueError(f"degree must be in 0..3, got {p}")

    # -- Kitaoka rescaling -----------------------------------------------------

    def kitaoka_differential(self, p: int, n: int = 1):
        """|n - p|^{-1/2} d_H on degree p; rejected on middle degrees."""
        return kitaoka_scale(n, p) * self.d_rumin(p)

    # -- middle-degree signature -------------------------------------------------

    def star_middle(self):
        """Componentwise star mapping the degree-1 Rumin bundle to the degree-2 one."""
        M = self.fiber_bases[2].conj().T @ self.fiber_bases[1][FIBER_OFFSETS[2] - 3:, :]
        raise NotImplementedError  # replaced below; kept for clarity of intent

    def signature_middle(self, tol: float = 1e-10):
        """Hermitian middle blocks of the Rumin signature operator -i(D I + I D).

        The chirality phase on the middle pair is solved for, as the convention
        is not pinned down; both diagonal blocks must come out Hermitian.
        """
        # star: identity component map between degrees 1 and 2 in the ambient bases
        amb_star_12 = None
        if self.dc._sp:
            amb = sparse.identity(self.dc.dims[1], format="csr", dtype=complex)
        else:
            amb = np.eye(self.dc.dims[1], dtype=complex)
        star_12 = herm(self.basis[1]) @ amb @ self.basis[2]   # degree 2 -> degree 1 components
        D = self.D
        scale = max(op_abs_max(D), 1.0)
        for c2 in (1.0, -1.0, 1j, -1j):
            S11 = -1j * c2 * (star_12 @ D)
            S22 = -1j * c2 * (D @ star_12)
            r = max(op_abs_max(S11 - herm(S11)), op_abs_max(S22 - herm(S22)))
            if r < tol * scale:
                return {1: S11, 2: S22, "phase": c2}
        raise RuntimeError("no chirality phase makes the Rumin middle signature Hermitian")


def kitaoka_scale(n: int, p: int) -> float:
    """The rescaling |n - p|^{-1/2} of the first-order differential on degree p."""
    if p in (n, n + 1):
        raise ValueError(f"degree {p} is middle for n={n}; the rescaling is undefined there")
    return abs(n - p) ** -0.5


def op_abs_max_arr(A: np.ndarray) -> float:
    return float(np.abs(A).max()) if A.size else 0.0
