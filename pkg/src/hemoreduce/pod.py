"""Method-of-snapshots POD under the weighted cell-quadrature inner product.

Scaling convention: the correlation matrix carries a 1/N_s factor,
C_ij = (1/N_s) (u_i, u_j)_w, so the eigenvalues satisfy the discrete Parseval
identity sum_n ||u_n||^2 = N_s sum_i lambda_i.  Modes are assembled as
phi_i = (1 / sqrt(N_s lambda_i)) sum_n u_n Q_ni and then re-orthonormalized
by modified Gram-Schmidt, which is the enforced ground truth.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import LengthMismatch, NotSymmetric, RankDeficient
from .snapshots import SnapshotMatrix, component_weights, inner_product

RANK_EPS = 1e-12


@dataclass
class PodBasis:
    """Orthonormal spatial modes with eigenvalues and training coefficients."""

    field_kind: str
    modes: np.ndarray          # (n_dof, N_r), columns orthonormal under weights
    eigenvalues: np.ndarray    # full spectrum, descending, clipped at 0
    coeff_train: np.ndarray    # (N_r, N_s)
    energy_fraction: np.ndarray  # cumulative sum(lambda_1..k)/sum(lambda)
    weights: np.ndarray        # per-cell quadrature weights

    @property
    def n_modes(self):
        return self.modes.shape[1]

    @property
    def n_dof(self):
        return self.modes.shape[0]

    @property
    def dof_weights(self):
        return component_weights(self.weights, self.n_dof)

    def gram(self):
        w = self.dof_weights
        return self.modes.T @ (w[:, None] * self.modes)


def correlation_matrix(snaps: SnapshotMatrix) -> np.ndarray:
    """C_ij = (1/N_s) (col_i, col_j)_w, symmetric by construction."""
    w = component_weights(snaps.weights, snaps.n_dof)
    wc = w[:, None] * snaps.columns
    n_s = snaps.n_snapshots
    c = np.empty((n_s, n_s))
    for i in range(n_s):
        row = snaps.columns[:, i] @ wc[:, i:]
        c[i, i:] = row
        c[i:, i] = row
    return c / n_s


def solve_eigen(c):
    """Symmetric eigendecomposition, eigenvalues descending, negatives clipped."""
    c = np.asarray(c, dtype=float)
    scale = max(np.abs(c).max(), 1.0)
    if np.abs(c - c.T).max() > 1e-12 * scale:
        raise NotSymmetric("correlation matrix is not symmetric")
    lam, q = scipy.linalg.eigh(0.5 * (c + c.T))
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    return q[:, order], lam


def compute_modes(snaps: SnapshotMatrix, q, lam, n_r) -> PodBasis:
    """Assemble n_r modes, re-orthonormalize, and project the training set."""
    n_s = snaps.n_snapshots
    if n_r < 1 or n_r > n_s:
        raise RankDeficient(f"requested {n_r} modes from {n_s} snapshots")
    if lam[n_r - 1] <= RANK_EPS * max(lam[0], np.finfo(float).tiny):
        raise RankDeficient(
            f"mode {n_r} eigenvalue {lam[n_r - 1]:.3e} below the rank threshold")
    modes = snaps.columns @ (q[:, :n_r] / np.sqrt(n_s * lam[:n_r]))

    # modified Gram-Schmidt under the weighted inner product
    w = component_weights(snaps.weights, snaps.n_dof)
    for i in range(n_r):
        for j in range(i):
            modes[:, i] -= inner_product(modes[:, i], modes[:, j], w) * modes[:, j]
        nrm = np.sqrt(inner_product(modes[:, i], modes[:, i], w))
        if nrm <= 0.0:
            raise RankDeficient(f"mode {i + 1} vanished during orthonormalization")
        modes[:, i] /= nrm

    coeff = modes.T @ (w[:, None] * snaps.columns)
    total = lam.sum()
    energy = np.cumsum(lam) / total if total > 0.0 else np.zeros_like(lam)
    return PodBasis(field_kind=snaps.field_kind, modes=modes,
                    eigenvalues=lam.copy(), coeff_train=coeff,
                    energy_fraction=energy, weights=snaps.weights.copy())


def pod_from_snapshots(snaps: SnapshotMatrix, n_r) -> PodBasis:
    """Convenience wrapper: correlation -> eigen -> modes."""
    q, lam = solve_eigen(correlation_matrix(snaps))
    return compute_modes(snaps, q, lam, n_r)


def project(field, basis: PodBasis):
    """Coefficients a_i = (field, phi_i)_w."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] != basis.n_dof:
        raise LengthMismatch(
            f"field length {field.shape[0]} != mode length {basis.n_dof}")
    w = basis.dof_weights
    return basis.modes.T @ (w * field)


def reconstruct(basis: PodBasis, coeffs):
    """Linear combination sum_i a_i phi_i."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] > basis.n_modes:
        raise LengthMismatch(
            f"{coeffs.shape[0]} coefficients but only {basis.n_modes} modes")
    return basis.modes[:, :coeffs.shape[0]] @ coeffs
