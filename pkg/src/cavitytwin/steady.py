"""Driven Jaynes-Cummings generator on the truncated atom (x) field basis.

Builds the dissipative generator (atomic dipole decay at gamma_perp, total
cavity decay at kappa_total, coherent drive fixed by m_empty), solves for
steady states by bordered sparse linear algebra, propagates operators with
explicit Euler steps, and evaluates the regression-theorem correlation
integral that feeds the momentum-diffusion tables.

Phase conventions are fixed so that the empty-cavity steady field is
sqrt(2 kappa_a) E / (kappa_total + i theta_cp) -- real and positive for a
resonant probe -- and so that the mean force on the atom is
hbar * <-i(a^dag sigma - a sigma^dag)> * grad g.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .params import PhysicalParams, drive_amplitude


class SteadyStateError(RuntimeError):
    """Steady-state solve failed its residual or invariant checks."""


class DegenerateSteadyStateError(SteadyStateError):
    """The generator has a non-unique steady state."""


class BasisTooSmallError(ValueError):
    """Drive strength implies a mean photon number the Fock cutoff cannot hold."""


class DensityOperatorError(ValueError):
    """Matrix does not satisfy the density-operator invariants."""


@dataclass(frozen=True)
class HilbertConfig:
    """Truncated basis: two atomic levels times n_fock photon states."""

    n_fock: int

    def __post_init__(self):
        if self.n_fock < 2:
            raise ValueError("n_fock must be >= 2")

    @property
    def dim(self) -> int:
        return 2 * self.n_fock


def default_n_fock(m_empty: float) -> int:
    """Poisson-tail cutoff: max(25, ceil(m + 6 sqrt(m)) + 4)."""
    return max(25, math.ceil(m_empty + 6.0 * math.sqrt(m_empty)) + 4)


@lru_cache(maxsize=32)
def _basis_ops(n_fock: int):
    """(a, sigma) on the atom (x) field product basis; atom index 0 = ground."""
    a_f = np.diag(np.sqrt(np.arange(1, n_fock)), k=1).astype(complex)
    lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|
    eye_f = np.eye(n_fock, dtype=complex)
    eye_a = np.eye(2, dtype=complex)
    a = np.kron(eye_a, a_f)
    sigma = np.kron(lower, eye_f)
    return a, sigma


def annihilation_operator(hc: HilbertConfig) -> np.ndarray:
    return _basis_ops(hc.n_fock)[0].copy()


def lowering_operator(hc: HilbertConfig) -> np.ndarray:
    return _basis_ops(hc.n_fock)[1].copy()


def force_observable(hc: HilbertConfig) -> np.ndarray:
    """Dimensionless force quadrature -i (a^dag sigma - a sigma^dag)."""
    a, sigma = _basis_ops(hc.n_fock)
    return -1j * (a.conj().T @ sigma - a @ sigma.conj().T)


def ground_vacuum(hc: HilbertConfig) -> np.ndarray:
    rho = np.zeros((hc.dim, hc.dim), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def coherent_ground(hc: HilbertConfig, alpha: complex) -> np.ndarray:
    """Coherent field state (amplitude alpha) with the atom in its ground state."""
    n = np.arange(hc.n_fock)
    amps = np.exp(-0.5 * abs(alpha) ** 2) * alpha ** n / np.sqrt(
        np.array([math.factorial(int(k)) for k in n], dtype=float))
    psi = np.zeros(hc.dim, dtype=complex)
    psi[:hc.n_fock] = amps  # atom index 0 block
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def validate_density_operator(rho: np.ndarray, herm_tol: float = 1e-10,
                              trace_tol: float = 1e-10,
                              eig_tol: float = -1e-8) -> None:
    """Check hermiticity, unit trace and numerical positivity; raise on violation."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DensityOperatorError("density operator must be a square matrix")
    scale = max(1.0, float(np.abs(rho).max()))
    if np.abs(rho - rho.conj().T).max() > herm_tol * scale:
        raise DensityOperatorError("density operator is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise DensityOperatorError(f"trace {tr} differs from 1")
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < eig_tol:
        raise DensityOperatorError(
            f"minimum eigenvalue {evals.min():.3e} below positivity tolerance")


class Liouvillian:
    """Generator of the driven, damped atom-cavity master equation at fixed coupling g.

    Works in units with hbar = 1 (everything in rad/s):

        H = theta_cp a^dag a + delta_ap sigma^dag sigma
            + i sqrt(2 kappa_a) E (a^dag - a) + i g (a^dag sigma - a sigma^dag)
        L(rho) = -i[H, rho] + gamma_perp (2 s rho s^dag - s^dag s rho - rho s^dag s)
                 + kappa_total (2 a rho a^dag - a^dag a rho - rho a^dag a)
    """

    def __init__(self, p: PhysicalParams, hc: HilbertConfig, g: float):
        if p.m_empty > hc.n_fock / 2.0:
            raise BasisTooSmallError(
                f"m_empty = {p.m_empty} needs n_fock > {2 * p.m_empty:.0f}, "
                f"got {hc.n_fock}")
        self.params = p
        self.hilbert = hc
        self.g = float(g)
        self.drive = drive_amplitude(p)

        a, sigma = _basis_ops(hc.n_fock)
        self._a = a
        self._sigma = sigma
        self._ad = a.conj().T
        self._sd = sigma.conj().T
        self._n_op = self._ad @ a
        self._ee = self._sd @ sigma

        e_rate = math.sqrt(2.0 * p.kappa_a) * self.drive
        H = (p.theta_cp * self._n_op + p.delta_ap * self._ee
             + 1j * e_rate * (self._ad - a)
             + 1j * self.g * (self._ad @ sigma - a @ self._sd))
        self.hamiltonian = H
        self._superop = None
        self._lu = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        """L(X) by matrix products (fast path for time propagation)."""
        p = self.params
        H, a, ad, s, sd = self.hamiltonian, self._a, self._ad, self._sigma, self._sd
        out = -1j * (H @ X - X @ H)
        out += p.gamma_perp * (2.0 * (s @ X @ sd) - self._ee @ X - X @ self._ee)
        out += p.kappa_total * (2.0 * (a @ X @ ad) - self._n_op @ X - X @ self._n_op)
        return out

    def superoperator(self) -> sp.csc_matrix:
        """Sparse matrix acting on column-stacked operators (cached)."""
        if self._superop is None:
            d = self.hilbert.dim
            eye = sp.identity(d, format="csc", dtype=complex)
            H = sp.csc_matrix(self.hamiltonian)
            a = sp.csc_matrix(self._a)
            s = sp.csc_matrix(self._sigma)
            n_op = sp.csc_matrix(self._n_op)
            ee = sp.csc_matrix(self._ee)
            p = self.params

            def dissipator(J, JdJ, rate):
                return rate * (2.0 * sp.kron(J.conj(), J)
                               - sp.kron(eye, JdJ) - sp.kron(JdJ.T, eye))

            L = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
            L = L + dissipator(s, ee, p.gamma_perp)
            L = L + dissipator(a, n_op, p.kappa_total)
            self._superop = L.tocsc()
        return self._superop

    def norm_bound(self) -> float:
        """Upper bound on the superoperator 2-norm; used for Euler stability."""
        p = self.params
        h_norm = np.linalg.norm(self.hamiltonian, 2)
        return float(2.0 * h_norm
                     + 4.0 * (p.gamma_perp + p.kappa_total * (self.hilbert.n_fock - 1)))

    # -- bordered solve machinery -------------------------------------------

    def _bordered_lu(self):
        """LU of L + |0,0><0,0| trace-border; invertible iff the kernel is 1-D."""
        if self._lu is None:
            d = self.hilbert.dim
            n2 = d * d
            diag_idx = np.arange(d) * (d + 1)  # vec indices of diagonal entries
            border = sp.csc_matrix(
                (np.ones(d, dtype=complex), (np.zeros(d, dtype=int), diag_idx)),
                shape=(n2, n2))
            self._lu = spla.splu((self.superoperator() + border).tocsc())
        return self._lu

    def _trace_zero_solve(self, X: np.ndarray) -> np.ndarray:
        """Solve L(V) = -X for the trace-zero V (X must be traceless)."""
        d = self.hilbert.dim
        lu = self._bordered_lu()
        v = lu.solve(-X.flatten(order="F"))
        return v.reshape((d, d), order="F")


def steady_state(L: Liouvillian, check_unique: bool = True) -> np.ndarray:
    """Unique steady state of L, with residual and invariant checks.

    The vectorized kernel problem is closed with a trace border; a second,
    independently-bordered solve (via a rank-one update of the same
    factorization) must agree, otherwise the kernel is degenerate and a
    DegenerateSteadyStateError is raised rather than silently picking one.
    """
    d = L.hilbert.dim
    n2 = d * d
    try:
        lu = L._bordered_lu()
    except RuntimeError as exc:
        # A trace-preserving generator with a 1-D kernel always yields an
        # invertible bordered system; exact singularity means degeneracy.
        raise DegenerateSteadyStateError(
            f"bordered steady-state system is singular ({exc})") from exc
    rhs = np.zeros(n2, dtype=complex)
    rhs[0] = 1.0  # vec(|0,0><0,0|)
    rho_vec = lu.solve(rhs)
    rho = rho_vec.reshape((d, d), order="F")

    tr = np.trace(rho)
    if not np.isfinite(rho).all() or abs(tr) < 0.5:
        raise SteadyStateError("bordered steady-state solve failed (singular generator?)")
    rho = rho / tr
    rho = 0.5 * (rho + rho.conj().T)

    residual = np.linalg.norm(L.apply(rho))
    bound = L.norm_bound()
    if residual > 1e-10 * bound:
        raise SteadyStateError(
            f"steady-state residual {residual:.3e} exceeds 1e-10 * |L| = {1e-10 * bound:.3e}")

    if check_unique:
        # Sherman-Morrison re-solve with the border moved to the last basis
        # state: both borders give the same state only for a 1-D kernel.
        diag_idx = np.arange(d) * (d + 1)
        rhs2 = np.zeros(n2, dtype=complex)
        rhs2[n2 - 1] = 1.0  # vec(|d-1,d-1><d-1,d-1|)
        u = rhs2 - rhs      # A2 = A1 + u * trace_row
        y_b = lu.solve(rhs2)
        y_u = lu.solve(u)
        denom = 1.0 + y_u[diag_idx].sum()
        if abs(denom) < 1e-12:
            raise DegenerateSteadyStateError("degenerate steady-state kernel")
        rho2_vec = y_b - y_u * (y_b[diag_idx].sum() / denom)
        rho2 = rho2_vec.reshape((d, d), order="F")
        tr2 = np.trace(rho2)
        if abs(tr2) < 0.5:
            raise DegenerateSteadyStateError("degenerate steady-state kernel")
        rho2 = 0.5 * (rho2 / tr2 + (rho2 / tr2).conj().T)
        if np.abs(rho2 - rho).max() > 1e-8:
            raise DegenerateSteadyStateError(
                "steady state depends on the border: null space is not one-dimensional")

    validate_density_operator(rho)
    return rho


@dataclass(frozen=True)
class SteadyExpectations:
    field: complex        # <a>
    excitation: float     # <sigma^dag sigma>
    force_scalar: float   # <-i(a^dag sigma - a sigma^dag)>
    photon: float         # <a^dag a>


def expectations(rho: np.ndarray, hc: HilbertConfig) -> SteadyExpectations:
    """Field, excitation, force scalar and photon number of a density operator."""
    validate_density_operator(rho)
    a, sigma = _basis_ops(hc.n_fock)
    field = complex(np.trace(a @ rho))
    exc = np.trace(sigma.conj().T @ sigma @ rho)
    photon = np.trace(a.conj().T @ a @ rho)
    fval = np.trace(force_observable(hc) @ rho)
    if abs(fval.imag) > 1e-10 * max(1.0, abs(fval)):
        raise SteadyStateError(f"force scalar has imaginary part {fval.imag:.3e}")
    return SteadyExpectations(field=field, excitation=float(exc.real),
                              force_scalar=float(fval.real),
                              photon=float(photon.real))


def _euler_vec(L_sp, x: np.ndarray, dt: float, n_steps: int, norm0: float,
               weight: np.ndarray | None = None, samples: list | None = None):
    """The Euler kernel x <- x + dt (L x) on vectorized operators.

    When weight is given, dot(weight, x) is appended to samples before
    every step (i.e. at times 0, dt, ..., (n_steps-1) dt).
    """
    for i in range(n_steps):
        if weight is not None:
            samples.append(weight @ x)
        x = x + dt * (L_sp @ x)
        if (i & 0x3F) == 0x3F and not (np.linalg.norm(x) <= 1e3 * norm0):
            # inverted comparison also trips on overflow to nan/inf
            raise RuntimeError(
                f"propagation unstable after {i + 1} steps "
                f"(norm grew past 1e3 x initial; dt = {dt:.3e})")
    return x


def propagate(L: Liouvillian, X: np.ndarray, duration: float,
              dt: float | None = None) -> np.ndarray:
    """Explicit-Euler evolution X <- X + dt L(X) over the given duration.

    dt defaults to the stability bound 0.1/|L| and may not exceed it.
    A final shorter step lands exactly on the requested duration.
    """
    bound = 0.1 / L.norm_bound()
    if dt is None:
        dt = bound
    elif dt > bound * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")
    d = L.hilbert.dim
    x = np.asarray(X, dtype=complex).flatten(order="F")
    norm0 = max(np.linalg.norm(x), 1e-300)
    L_sp = L.superoperator().tocsr()
    n_full = int(duration / dt)
    remainder = duration - n_full * dt
    x = _euler_vec(L_sp, x, dt, n_full, norm0)
    if remainder > 1e-15 * duration:
        x = x + remainder * (L_sp @ x)
    return x.reshape((d, d), order="F")


def qrt_correlation_integral(L: Liouvillian, rho_ss: np.ndarray, F: np.ndarray,
                             method: str = "solve", t_int: float = 5e-6,
                             dt: float | None = None) -> float:
    """Re Int_0^inf (Tr[F e^{L tau}(F rho_ss)] - <F>^2) dtau.

    method="solve" (default): with X = F rho_ss - <F> rho_ss (traceless), the
    integral equals Re Tr[F (-L)^{-1} X] on the trace-zero subspace; one
    triangular solve against the cached factorization.  method="integrate"
    is the explicit time integration over [0, t_int] used as cross-check;
    "solve" falls back to it with a warning if the resolvent solve fails.
    """
    f_mean = np.trace(F @ rho_ss)
    X0 = F @ rho_ss - f_mean * rho_ss

    if method == "solve":
        try:
            V = L._trace_zero_solve(X0)
            resid = np.linalg.norm(L.apply(V) + X0)
            if not np.isfinite(V).all() or resid > 1e-8 * max(np.linalg.norm(X0), 1e-300):
                raise SteadyStateError(f"resolvent residual {resid:.3e}")
        except (RuntimeError, SteadyStateError) as exc:
            warnings.warn(f"resolvent solve ill-conditioned ({exc}); "
                          "falling back to time integration")
            return qrt_correlation_integral(L, rho_ss, F, "integrate", t_int, dt)
        return float(np.trace(F @ V).real)

    if method != "integrate":
        raise ValueError(f"unknown method {method!r}")

    # Time integration: the same Euler kernel as propagate(), recording
    # Tr[F X(tau)] every step and summing by trapezoid.
    step = 0.1 / L.norm_bound() if dt is None else dt
    n_full = int(t_int / step)
    remainder = t_int - n_full * step
    # Tr[F X] = dot(w, vec(X)) with w = row-major flattening of F.
    weight = np.asarray(F, dtype=complex).flatten(order="C")
    x = X0.flatten(order="F")
    norm0 = max(np.linalg.norm(x), 1e-300)
    L_sp = L.superoperator().tocsr()
    samples: list = []
    x = _euler_vec(L_sp, x, step, n_full, norm0, weight=weight, samples=samples)
    samples.append(weight @ x)
    vals = np.asarray(samples)
    integral = step * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    if remainder > 1e-15 * t_int:
        x_end = x + remainder * (L_sp @ x)
        integral += 0.5 * remainder * (vals[-1] + weight @ x_end)
    return float(integral.real)
