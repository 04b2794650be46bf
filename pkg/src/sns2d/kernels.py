"""Hot inner loops: per-step assembly and point evaluation kernels.

Each kernel has a numba @njit implementation and an equivalent vectorized
numpy implementation. The backend is chosen at import time: numba when it
is importable, numpy otherwise, and numpy whenever the environment variable
SNS2D_DISABLE_NUMBA is set to a non-empty value other than "0". The two
backends agree to rounding; replay files record which one produced a run.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_IMPORTED = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_IMPORTED = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap


def _env_disabled() -> bool:
    return os.environ.get("SNS2D_DISABLE_NUMBA", "0") not in ("", "0", "false", "False")


_BACKEND = "numpy" if (_env_disabled() or not NUMBA_IMPORTED) else "numba"


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime ('numba' or 'numpy')."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not NUMBA_IMPORTED:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


# ---------------------------------------------------------------------------
# convection element matrices
#
# C_loc[i, j] = sum_q w_q detJ [ (b(x_q) . grad phi_j) phi_i
#                                + theta * div b(x_q) * phi_j phi_i ]
# acting identically on both velocity components.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _conv_mats_numba(bx, by, val, gx, gy, wdet, theta, out):
    nelem, nl = bx.shape
    nq = val.shape[0]
    for e in range(nelem):
        c = e & 1
        for q in range(nq):
            bq0 = 0.0
            bq1 = 0.0
            dv = 0.0
            for l in range(nl):
                bq0 += bx[e, l] * val[q, l]
                bq1 += by[e, l] * val[q, l]
                dv += bx[e, l] * gx[c, q, l] + by[e, l] * gy[c, q, l]
            w = wdet[q]
            for j in range(nl):
                adv = bq0 * gx[c, q, j] + bq1 * gy[c, q, j] + theta * dv * val[q, j]
                for i in range(nl):
                    out[e, j, i] += w * adv * val[q, i]
    return out


def _conv_mats_numpy(bx, by, val, gx, gy, wdet, theta, out):
    # class parity alternates lower/upper along the element ordering
    for c in (0, 1):
        sel = slice(c, None, 2)
        bq0 = bx[sel] @ val.T                       # (ne2, nq)
        bq1 = by[sel] @ val.T
        dv = bx[sel] @ gx[c].T + by[sel] @ gy[c].T  # (ne2, nq)
        adv = (bq0[:, :, None] * gx[c][None] + bq1[:, :, None] * gy[c][None]
               + theta * dv[:, :, None] * val[None])
        out[sel] += np.einsum("q,eqj,qi->eji", wdet, adv, val)
    return out


def convection_element_matrices(bx, by, val, gx, gy, wdet, theta):
    """Per-element scalar convection blocks, (nelem, nloc, nloc).

    Entry [e, j, i] multiplies trial dof j against test dof i; rows of the
    assembled operator are test dofs.
    """
    nelem, nl = bx.shape
    out = np.zeros((nelem, nl, nl))
    if _BACKEND == "numba":
        return _conv_mats_numba(bx, by, val, gx, gy, wdet, theta, out)
    return _conv_mats_numpy(bx, by, val, gx, gy, wdet, theta, out)


# ---------------------------------------------------------------------------
# point location and Lagrange evaluation on the structured torus mesh
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _locate(x, y, n, width):
    """Containing triangle and reference coordinates of a physical point."""
    u = (x + np.pi) / width
    v = (y + np.pi) / width
    iu = int(np.floor(u))
    iv = int(np.floor(v))
    fx = u - iu
    fy = v - iv
    iu = iu % n
    iv = iv % n
    t = 2 * (iv * n + iu)
    if fy <= fx:
        return t, fx - fy, fy
    return t + 1, fx, fy - fx


@njit(cache=True)
def _eval_scalar_numba(pts, coeffs, dofmap, n, width, degree):
    npts = pts.shape[0]
    out = np.zeros(npts)
    for p in range(npts):
        t, xi, eta = _locate(pts[p, 0], pts[p, 1], n, width)
        lam0 = 1.0 - xi - eta
        if degree == 1:
            out[p] = (coeffs[dofmap[t, 0]] * lam0
                      + coeffs[dofmap[t, 1]] * xi
                      + coeffs[dofmap[t, 2]] * eta)
        else:
            out[p] = (coeffs[dofmap[t, 0]] * lam0 * (2.0 * lam0 - 1.0)
                      + coeffs[dofmap[t, 1]] * xi * (2.0 * xi - 1.0)
                      + coeffs[dofmap[t, 2]] * eta * (2.0 * eta - 1.0)
                      + coeffs[dofmap[t, 3]] * 4.0 * lam0 * xi
                      + coeffs[dofmap[t, 4]] * 4.0 * xi * eta
                      + coeffs[dofmap[t, 5]] * 4.0 * eta * lam0)
    return out


def _locate_numpy(pts, n, width):
    u = (pts[:, 0] + np.pi) / width
    v = (pts[:, 1] + np.pi) / width
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fx = u - iu
    fy = v - iv
    t = 2 * ((iv % n) * n + (iu % n))
    upper = fy > fx
    t = t + upper
    xi = np.where(upper, fx, fx - fy)
    eta = np.where(upper, fy - fx, fy)
    return t, xi, eta


def _basis_table(xi, eta, degree):
    lam0 = 1.0 - xi - eta
    if degree == 1:
        return np.stack([lam0, xi, eta], axis=-1)
    return np.stack([
        lam0 * (2.0 * lam0 - 1.0),
        xi * (2.0 * xi - 1.0),
        eta * (2.0 * eta - 1.0),
        4.0 * lam0 * xi,
        4.0 * xi * eta,
        4.0 * eta * lam0,
    ], axis=-1)


def _eval_scalar_numpy(pts, coeffs, dofmap, n, width, degree):
    t, xi, eta = _locate_numpy(pts, n, width)
    phi = _basis_table(xi, eta, degree)
    return np.sum(coeffs[dofmap[t]] * phi, axis=1)


def eval_scalar(pts, coeffs, dofmap, n, width, degree):
    """Evaluate a scalar Lagrange field at arbitrary physical points."""
    if _BACKEND == "numba":
        return _eval_scalar_numba(pts, coeffs, np.ascontiguousarray(dofmap),
                                  n, width, degree)
    return _eval_scalar_numpy(pts, coeffs, dofmap, n, width, degree)


# ---------------------------------------------------------------------------
# noise load: l[i] = int sum_k g_k(x, u(x)) dbeta_k . phi_i dx
#
# Mode family: g_k(x, xi) = amp_k * rho_k(x) * psi(xi_{comp_k}) * e_{comp_k}
# with rho_k(x) = cos(kx x + ky y) or sin(kx x + ky y) and psi selected by
# psi_mode: 0 constant 1, 1 identity, 2 sqrt(1 + s^2).
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _psi(s, psi_mode):
    if psi_mode == 0:
        return 1.0
    if psi_mode == 1:
        return s
    return np.sqrt(1.0 + s * s)


@njit(cache=True)
def _noise_load_numba(cornx, corny, dofmap, ux, uy, val, qpref, wdet, width,
                      amp, kxv, kyv, trig, comp, psi_mode, dbeta, out):
    nelem, nl = ux.shape
    nq = val.shape[0]
    nk = amp.shape[0]
    for e in range(nelem):
        c = e & 1
        for q in range(nq):
            xi = qpref[q, 0]
            eta = qpref[q, 1]
            if c == 0:
                x = cornx[e] + width * (xi + eta)
                y = corny[e] + width * eta
            else:
                x = cornx[e] + width * xi
                y = corny[e] + width * (xi + eta)
            u0 = 0.0
            u1 = 0.0
            for l in range(nl):
                u0 += ux[e, l] * val[q, l]
                u1 += uy[e, l] * val[q, l]
            f0 = 0.0
            f1 = 0.0
            for k in range(nk):
                phase = kxv[k] * x + kyv[k] * y
                rho = np.cos(phase) if trig[k] == 0 else np.sin(phase)
                if comp[k] == 0:
                    f0 += amp[k] * rho * _psi(u0, psi_mode) * dbeta[k]
                else:
                    f1 += amp[k] * rho * _psi(u1, psi_mode) * dbeta[k]
            w = wdet[q]
            for i in range(nl):
                out[0, dofmap[e, i]] += w * f0 * val[q, i]
                out[1, dofmap[e, i]] += w * f1 * val[q, i]
    return out


def _noise_load_numpy(cornx, corny, dofmap, ux, uy, val, qpref, wdet, width,
                      amp, kxv, kyv, trig, comp, psi_mode, dbeta, out):
    nq = val.shape[0]
    xi = qpref[:, 0]
    eta = qpref[:, 1]
    lower = (np.arange(len(cornx)) % 2) == 0
    x = np.where(lower[:, None], cornx[:, None] + width * (xi + eta)[None],
                 cornx[:, None] + width * xi[None])
    y = np.where(lower[:, None], corny[:, None] + width * eta[None],
                 corny[:, None] + width * (xi + eta)[None])
    u0 = ux @ val.T
    u1 = uy @ val.T
    if psi_mode == 0:
        psi0 = np.ones_like(u0)
        psi1 = np.ones_like(u1)
    elif psi_mode == 1:
        psi0, psi1 = u0, u1
    else:
        psi0 = np.sqrt(1.0 + u0 * u0)
        psi1 = np.sqrt(1.0 + u1 * u1)
    f0 = np.zeros_like(u0)
    f1 = np.zeros_like(u1)
    for k in range(len(amp)):
        phase = kxv[k] * x + kyv[k] * y
        rho = np.cos(phase) if trig[k] == 0 else np.sin(phase)
        if comp[k] == 0:
            f0 += amp[k] * dbeta[k] * rho * psi0
        else:
            f1 += amp[k] * dbeta[k] * rho * psi1
    contrib0 = np.einsum("q,eq,qi->ei", wdet, f0, val)
    contrib1 = np.einsum("q,eq,qi->ei", wdet, f1, val)
    np.add.at(out[0], dofmap, contrib0)
    np.add.at(out[1], dofmap, contrib1)
    return out


def noise_load(cornx, corny, dofmap, ux, uy, val, qpref, wdet, width,
               amp, kxv, kyv, trig, comp, psi_mode, dbeta, nscalar):
    """Assemble the velocity load of the stochastic forcing increment."""
    out = np.zeros((2, nscalar))
    if _BACKEND == "numba":
        return _noise_load_numba(cornx, corny, np.ascontiguousarray(dofmap),
                                 ux, uy, val, qpref, wdet, width, amp, kxv,
                                 kyv, trig, comp, psi_mode, dbeta, out)
    return _noise_load_numpy(cornx, corny, dofmap, ux, uy, val, qpref, wdet,
                             width, amp, kxv, kyv, trig, comp, psi_mode,
                             dbeta, out)
