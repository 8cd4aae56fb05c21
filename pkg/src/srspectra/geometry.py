"""Model contact 3-torus, twisted spectral grids, and connection coefficients.

The model lives on (R/2pi Z)^3 with contact form

    theta = cos(z) dx + sin(z) dy,

Reeb field R = cos(z) dx + sin(z) dy (as a vector field), and horizontal
frame e1 = -sin(z) dx + cos(z) dy, e2 = dz.  The coframe (eta1, eta2, theta)
is a pointwise rotation of (dx, dy, dz), so the reference metric g_1 (frame
orthonormal) is the flat metric on the torus.  All frame coefficients are
single-frequency trigonometric polynomials in z, hence exactly representable
on any Fourier grid with N >= 4 nodes per axis.

Flat unitary line-bundle twists are realized as quasi-periodic boundary
conditions: the spectral derivative along axis j acts with wavenumbers
k + alpha_j.  The three derivative matrices act on different tensor axes and
therefore commute exactly, which makes d о d = 0 hold at machine precision
downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

TWO_PI = 2.0 * np.pi

# Frame-component ordering used throughout: (e1, e2, R) for vectors and
# (eta1, eta2, theta) for covectors.  Christoffel tables use the rescaled
# frame (u0, u1, u2) = (eps*R, e1, e2), matching the usual sub-Riemannian
# index convention where 0 is the (rescaled) Reeb direction.


@dataclass(frozen=True)
class ContactModel:
    """The model contact structure on the 3-torus, given by coefficient callables.

    ``frame[i]`` maps z-samples to the (d/dx, d/dy, d/dz)-coefficients of the
    i-th frame field; ``coframe[i]`` likewise for (dx, dy, dz)-coefficients of
    the dual coframe.  Structure constants satisfy [e_i, e_j] = c[k,i,j] e_k
    with ordering (e1, e2, R).
    """

    dim: int = 3
    n: int = 1
    frame: tuple[Callable, ...] = ()
    coframe: tuple[Callable, ...] = ()
    J: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0], [-1.0, 0.0]]))
    structure_constants: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3)))

    def frame_matrix(self, z: np.ndarray) -> np.ndarray:
        """Rows = frame vector coefficients at each z; shape (len(z), 3, 3)."""
        z = np.atleast_1d(z)
        M = np.zeros((z.size, 3, 3))
        for i, f in enumerate(self.frame):
            M[:, i, :] = np.stack(f(z), axis=-1)
        return M

    def coframe_matrix(self, z: np.ndarray) -> np.ndarray:
        """Rows = coframe covector coefficients at each z; shape (len(z), 3, 3)."""
        z = np.atleast_1d(z)
        M = np.zeros((z.size, 3, 3))
        for i, f in enumerate(self.coframe):
            M[:, i, :] = np.stack(f(z), axis=-1)
        return M

    def metric_coord(self, z: np.ndarray, eps: float) -> np.ndarray:
        """g_eps in coordinates: sum eta^a (x) eta^a + theta (x) theta / eps^2."""
        C = self.coframe_matrix(z)
        w = np.array([1.0, 1.0, 1.0 / eps**2])
        return np.einsum("zia,i,zib->zab", C, w, C)


def build_t3_model() -> ContactModel:
    """Assemble the model contact 3-torus.

    theta ^ dtheta = -dx^dy^dz, so theta is a genuine contact form, and
    g_H(.,.) = dtheta(., J.) is the identity in the frame (e1, e2).
    """
    frame = (
        lambda z: (-np.sin(z), np.cos(z), np.zeros_like(z)),   # e1
        lambda z: (np.zeros_like(z), np.zeros_like(z), np.ones_like(z)),  # e2
        lambda z: (np.cos(z), np.sin(z), np.zeros_like(z)),    # R
    )
    coframe = (
        lambda z: (-np.sin(z), np.cos(z), np.zeros_like(z)),   # eta1
        lambda z: (np.zeros_like(z), np.zeros_like(z), np.ones_like(z)),  # eta2
        lambda z: (np.cos(z), np.sin(z), np.zeros_like(z)),    # theta
    )
    c = np.zeros((3, 3, 3))
    # [e1, e2] = R, [e2, R] = e1, [R, e1] = 0
    c[2, 0, 1], c[2, 1, 0] = 1.0, -1.0
    c[0, 1, 2], c[0, 2, 1] = 1.0, -1.0
    return ContactModel(frame=frame, coframe=coframe, structure_constants=c)


def validate_model(model: ContactModel, z: np.ndarray, tol: float = 1e-14) -> dict:
    """Nodewise contact invariants: theta(R) = 1, i_R dtheta = 0, frame/coframe duality.

    Returns the residual per invariant; raises if any exceeds ``tol``.
    """
    F = model.frame_matrix(z)
    C = model.coframe_matrix(z)
    pairing = np.einsum("zia,zja->zij", C, F)   # coframe_i(frame_j)
    duality = np.max(np.abs(pairing - np.eye(3)))
    theta_of_reeb = np.max(np.abs(pairing[:, 2, 2] - 1.0))
    # dtheta = -eta1^eta2 in the frame, hence i_R dtheta = 0 identically;
    # check via g_H = dtheta(., J.) being the identity on (e1, e2).
    gH = np.zeros((z.size, 2, 2))
    dtheta = np.array([[0.0, -1.0], [1.0, 0.0]])  # dtheta(e_i, e_j) for i,j in {1,2}
    gH = np.einsum("ij,jk->ik", dtheta, model.J)
    gh_residual = np.max(np.abs(gH - np.eye(2)))
    res = {"duality": duality, "theta_reeb": theta_of_reeb, "g_H": gh_residual}
    worst = max(res.values())
    if worst > tol:
        raise ValueError(f"contact model invariants violated: {res}")
    return res


def spectral_derivative_1d(N: int, shift: float) -> np.ndarray:
    """Dense twisted spectral derivative on N uniform nodes of [0, 2pi).

    Diagonal in the Fourier basis with eigenvalues i(k + shift); exact on
    band-limited samples e^{ikx}.
    """
    k = np.fft.fftfreq(N, d=1.0 / N)
    F = np.fft.fft(np.eye(N), axis=0)
    return np.fft.ifft((1j * (k + shift))[:, None] * F, axis=0)


class Grid:
    """Uniform periodic Fourier grid on the 3-torus with a unitary twist.

    Exposes the scalar-field building blocks used by the operator assembly:
    sparse derivative operators per axis, multiplication by z-only
    coefficients, and the (uniform) quadrature weight.
    """

    def __init__(self, N: int, alpha=(0.0, 0.0, 0.0)):
        if N % 2 != 0 or N < 4:
            raise ValueError(f"N must be an even integer >= 4, got {N}")
        alpha = tuple(float(a) for a in alpha)
        if len(alpha) != 3 or any(a < 0.0 or a >= 1.0 for a in alpha):
            raise ValueError(f"holonomy must be three reals in [0, 1), got {alpha}")
        self.N = N
        self.alpha = alpha
        self.nodes = TWO_PI * np.arange(N) / N
        self.weight = (TWO_PI / N) ** 3
        self.dim = N**3
        self._d1 = [spectral_derivative_1d(N, a) for a in alpha]
        eye = sparse.identity(N, format="csr", dtype=complex)
        eye2 = sparse.identity(N * N, format="csr", dtype=complex)
        D = [sparse.csr_matrix(d) for d in self._d1]
        self._deriv = [
            sparse.kron(D[0], eye2, format="csr"),
            sparse.kron(eye, sparse.kron(D[1], eye, format="csr"), format="csr"),
            sparse.kron(eye2, D[2], format="csr"),
        ]

    @property
    def acyclic(self) -> bool:
        """The twisted bundle is acyclic iff the holonomy is nontrivial."""
        return any(a != 0.0 for a in self.alpha)

    def deriv(self, axis: int):
        return self._deriv[axis]

    def mul_z(self, values_z: np.ndarray):
        """Multiplication by a coefficient depending only on z."""
        return sparse.diags(np.tile(np.asarray(values_z, dtype=complex), self.N * self.N))

    def eye(self):
        return sparse.identity(self.dim, format="csr", dtype=complex)

    def zeros(self):
        return sparse.csr_matrix((self.dim, self.dim), dtype=complex)

    def sample(self, f) -> np.ndarray:
        """Sample f(x, y, z) on the grid, C-order raveled."""
        x, y, z = np.meshgrid(self.nodes, self.nodes, self.nodes, indexing="ij")
        return np.asarray(f(x, y, z), dtype=complex).ravel()

    def inner(self, f, g) -> complex:
        return self.weight * np.vdot(f, g)


class ModeGrid:
    """z-only backend for a single (kx, ky) Fourier mode of a twisted Grid.

    The model coefficients depend only on z, so the twisted operators
    block-diagonalize over (kx, ky); each block acts on z-fields with the
    in-plane derivatives replaced by the scalars i(k + alpha).
    """

    def __init__(self, N: int, alpha, kx: int, ky: int):
        self.N = N
        self.alpha = tuple(float(a) for a in alpha)
        self.kx, self.ky = kx, ky
        self.nodes = TWO_PI * np.arange(N) / N
        self.weight = TWO_PI ** 2 * (TWO_PI / N)
        self.dim = N
        self._dz = spectral_derivative_1d(N, self.alpha[2])
        self._sx = 1j * (kx + self.alpha[0])
        self._sy = 1j * (ky + self.alpha[1])

    def deriv(self, axis: int):
        if axis == 0:
            return self._sx * np.eye(self.N, dtype=complex)
        if axis == 1:
            return self._sy * np.eye(self.N, dtype=complex)
        return self._dz

    def mul_z(self, values_z: np.ndarray):
        return np.diag(np.asarray(values_z, dtype=complex))

    def eye(self):
        return np.eye(self.N, dtype=complex)

    def zeros(self):
        return np.zeros((self.N, self.N), dtype=complex)


def make_grid(N: int, alpha=(0.0, 0.0, 0.0)) -> Grid:
    """Build the twisted spectral grid; rejects odd or undersized N."""
    return Grid(N, alpha)


def mode_wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers of the length-N FFT, fftfreq ordering."""
    return np.fft.fftfreq(N, d=1.0 / N).astype(int)


# ---------------------------------------------------------------------------
# Connection coefficients of g_eps in the orthonormal frame (eps R, e1, e2).
# ---------------------------------------------------------------------------

# Laurent powers stored per Christoffel entry.
LAURENT_POWERS = (-1, 0, 1)


@dataclass(frozen=True)
class ChristoffelTable:
    """Christoffel symbols Gamma^k_{ij}(eps) of g_eps in the frame (eps R, e1, e2).

    ``coeff[i, j, k, m]`` is the coefficient of eps^LAURENT_POWERS[m] in
    Gamma^k_{ij}; the family is exactly a Laurent polynomial with powers
    {-1, 0, 1} for frame metrics with constant structure constants.
    """

    coeff: np.ndarray  # shape (3, 3, 3, 3)

    def evaluate(self, eps: float) -> np.ndarray:
        p = np.array([1.0 / eps, 1.0, eps])
        return np.einsum("ijkm,m->ijk", self.coeff, p)


def _bracket_laurent(model: ContactModel) -> np.ndarray:
    """Brackets of the rescaled frame (u0, u1, u2) = (eps R, e1, e2) as Laurent triples.

    Returns B[i, j, k, m]: the eps^LAURENT_POWERS[m]-coefficient of the u_k
    component of [u_i, u_j].
    """
    c = model.structure_constants  # [e_i, e_j] = c[k, i, j] e_k, ordering (e1, e2, R)
    # Map (e1, e2, R) index -> u index: e1 -> 1, e2 -> 2, R -> 0.
    to_u = {0: 1, 1: 2, 2: 0}
    B = np.zeros((3, 3, 3, 3))
    for i_e in range(3):
        for j_e in range(3):
            # scale of [u_i, u_j] relative to [e_i, e_j]: one factor eps per R involved
            scale_pow = (1 if i_e == 2 else 0) + (1 if j_e == 2 else 0)
            for k_e in range(3):
                val = c[k_e, i_e, j_e]
                if val == 0.0:
                    continue
                # component along e_k; expressing e_R = u0 / eps costs eps^{-1}
                pow_total = scale_pow - (1 if k_e == 2 else 0)
                m = LAURENT_POWERS.index(pow_total)
                B[to_u[i_e], to_u[j_e], to_u[k_e], m] += val
    return B


def tanno_christoffels(model: ContactModel) -> ChristoffelTable:
    """Closed-form Laurent Christoffel table from the frame Koszul formula.

    The frame (eps R, e1, e2) is g_eps-orthonormal with constant inner
    products, so 2 Gamma^k_{ij} = <[u_i,u_j],u_k> - <[u_j,u_k],u_i>
    + <[u_k,u_i],u_j>, evaluated per Laurent power.  The eps^0 part is the
    Tanno connection of the model (zero here); the eps^{-1} part carries the
    almost-complex structure, e.g. Gamma^0_{12} has eps^{-1} coefficient 1/2.
    """
    B = _bracket_laurent(model)
    coeff = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                coeff[i, j, k] = 0.5 * (B[i, j, k] - B[j, k, i] + B[k, i, j])
    return ChristoffelTable(coeff=coeff)


def christoffels_from_metric(model: ContactModel, eps: float, nz: int = 32,
                             scheme: str = "spectral", fd_step: float = 1e-3) -> np.ndarray:
    """Frame Christoffels of g_eps computed from coordinate metric samples.

    Independent of the Koszul route: samples g_eps on a z-grid, differentiates
    it numerically (exact spectral differentiation by default, or central
    finite differences), forms the coordinate Christoffels, and converts to
    the orthonormal frame (eps R, e1, e2).  The result is z-independent for
    this homogeneous model; the nodewise spread is checked.
    """
    z = TWO_PI * np.arange(nz) / nz
    G = model.metric_coord(z, eps)                      # (nz, 3, 3)
    if scheme == "spectral":
        D = spectral_derivative_1d(nz, 0.0).real
        dGdz = np.einsum("wz,zab->wab", D, G)
    elif scheme == "fd":
        Gp = model.metric_coord(z + fd_step, eps)
        Gm = model.metric_coord(z - fd_step, eps)
        dGdz = (Gp - Gm) / (2.0 * fd_step)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    dG = np.zeros((3, nz, 3, 3))
    dG[2] = dGdz                                        # coefficients depend on z only
    Ginv = np.linalg.inv(G)
    # coordinate Christoffels Gamma^c_{ab}
    Gam = 0.5 * (
        np.einsum("zcd,azdb->zcab", Ginv, dG)
        + np.einsum("zcd,bzda->zcab", Ginv, dG)
        - np.einsum("zcd,dzab->zcab", Ginv, dG)
    )
    # rescaled frame fields u_i in coordinates, u0 = eps R
    F = model.frame_matrix(z)                           # rows (e1, e2, R)
    U = np.zeros_like(F)
    U[:, 0, :] = eps * F[:, 2, :]
    U[:, 1, :] = F[:, 0, :]
    U[:, 2, :] = F[:, 1, :]
    if scheme == "spectral":
        dU = np.einsum("wz,zia->wia", spectral_derivative_1d(nz, 0.0).real, U)
    else:
        Fp, Fm = model.frame_matrix(z + fd_step), model.frame_matrix(z - fd_step)
        dUe = (Fp - Fm) / (2.0 * fd_step)
        dU = np.zeros_like(U)
        dU[:, 0, :] = eps * dUe[:, 2, :]
        dU[:, 1, :] = dUe[:, 0, :]
        dU[:, 2, :] = dUe[:, 1, :]
    # nabla_{u_i} u_j = u_i^a (d_a u_j^c + u_j^b Gamma^c_{ab}) d_c ; only d_z acts
    nab = (
        np.einsum("zi,zjc->zijc", U[:, :, 2], dU)
        + np.einsum("zia,zjb,zcab->zijc", U, U, Gam)
    )
    gamma_z = np.einsum("zijc,zcd,zkd->zijk", nab, G, U)
    spread = np.max(np.abs(gamma_z - gamma_z.mean(axis=0)))
    tol = 1e-8 if scheme == "spectral" else max(100 * fd_step**2, 1e-8)
    if spread > tol / eps:
        raise ValueError(f"frame Christoffels not constant over z: spread {spread:.3e}")
    return gamma_z.mean(axis=0)


def levi_civita_laurent_fit(model: ContactModel, eps_list, nz: int = 32,
                            scheme: str = "spectral") -> tuple[ChristoffelTable, float]:
    """Fit c_{-1}/eps + c_0 + c_1 eps to numerically computed Christoffels.

    Requires >= 3 distinct eps values in (0, 1]; returns the fitted table and
    the maximum least-squares residual over entries.  Must reproduce
    ``tanno_christoffels`` for this model.
    """
    eps_arr = np.asarray(sorted(set(float(e) for e in eps_list), reverse=True))
    if eps_arr.size < 3:
        raise ValueError("need at least 3 distinct eps values")
    if np.any(eps_arr <= 0.0) or np.any(eps_arr > 1.0):
        raise ValueError("eps values must lie in (0, 1]")
    V = np.stack([1.0 / eps_arr, np.ones_like(eps_arr), eps_arr], axis=1)
    cond = np.linalg.cond(V)
    if cond > 1e8:
        raise ValueError(f"ill-conditioned Laurent fit (cond {cond:.2e}); spread the eps values")
    samples = np.stack([christoffels_from_metric(model, e, nz=nz, scheme=scheme)
                        for e in eps_arr])            # (ne, 3, 3, 3)
    sol, *_ = np.linalg.lstsq(V, samples.reshape(eps_arr.size, -1), rcond=None)
    fit = np.moveaxis(sol, 0, -1).reshape(3, 3, 3, 3)
    resid = np.max(np.abs(V @ sol - samples.reshape(eps_arr.size, -1)))
    return ChristoffelTable(coeff=fit), float(resid)


def connection_checks(model: ContactModel, table: ChristoffelTable, eps: float) -> dict:
    """Metric compatibility and torsion-freeness of a reconstructed connection.

    In an orthonormal frame, compatibility is antisymmetry Gamma^k_{ij} =
    -Gamma^j_{ik}; torsion-freeness is Gamma^k_{ij} - Gamma^k_{ji} =
    <[u_i, u_j], u_k>.
    """
    g = table.evaluate(eps)
    compat = np.max(np.abs(g + np.swapaxes(g, 1, 2)))
    B = _bracket_laurent(model)
    p = np.array([1.0 / eps, 1.0, eps])
    brk = np.einsum("ijkm,m->ijk", B, p)
    torsion = np.max(np.abs(g - np.swapaxes(g, 0, 1) - brk))
    return {"metric_compat": float(compat), "torsion_free": float(torsion)}
