"""Convective numerical fluxes: local Lax-Friedrichs and HLLE.

Flux callables map a state vector ``u`` (length m) to an ``m x d`` matrix.
Eigenvalues of the normal flux Jacobian are supplied by the user as symbolic
expressions; :func:`jacobian_eigenvalues` recovers them numerically from the
characteristic polynomial for checking.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import symexpr as se
from .symexpr import SymArray, ShapeError

HLLE_DEGENERACY_TOL = 1e-12


def flux_matrix(F, m: int, d: int) -> SymArray:
    """Normalise a flux value to an ``m x d`` SymArray."""
    if isinstance(F, SymArray) and F.ndim == 1 and m == 1:
        F = se.as_matrix([list(F.data)])
    if not isinstance(F, SymArray) or F.shape != (m, d):
        shape = F.shape if isinstance(F, SymArray) else ()
        raise ShapeError(f"flux must have shape {(m, d)}, got {shape}")
    return F


def normal_flux(F_c: Callable, u: SymArray, n: SymArray) -> SymArray:
    """F^c(u) . n as an m-vector."""
    return se.dot(flux_matrix(F_c(u), len(u), len(n)), n)


def flux_jacobian_normal(F_c: Callable, u: SymArray, n: SymArray) -> SymArray:
    """B(u, n) = sum_i dF_i/du n_i for a state vector of terminals ``u``."""
    F = flux_matrix(F_c(u), len(u), len(n))
    B = None
    for i in range(len(n)):
        term = se.jacobian(F[:, i], u) * n[i]
        B = term if B is None else B + term
    return B


class EigenvalueSpec:
    """User-declared eigenvalues ``fn(u, n) -> [lambda_k]`` of B(u, n)."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def __call__(self, u, n) -> list:
        lam = self.fn(u, n)
        if isinstance(lam, SymArray):
            lam = list(lam.data.flat)
        elif not isinstance(lam, (list, tuple)):
            lam = [lam]
        if not lam:
            raise ValueError("eigenvalue function returned no eigenvalues")
        return [se.as_expr(x) for x in lam]


def _as_spec(spec) -> EigenvalueSpec:
    return spec if isinstance(spec, EigenvalueSpec) else EigenvalueSpec(spec)


def _reduce(fn, items):
    out = items[0]
    for x in items[1:]:
        out = fn(out, x)
    return out


def dissipation_alpha(spec, u_p, u_m, n) -> se.Expr:
    """max over both traces and all eigenvalues of |lambda_k|."""
    spec = _as_spec(spec)
    lams = [se.absolute(l) for w in (u_p, u_m) for l in spec(w, n)]
    return _reduce(se.max_value, lams)


def wave_speeds(spec, u_p, u_m, n):
    """Signed HLLE bounds (lambda_plus >= 0, lambda_minus <= 0)."""
    spec = _as_spec(spec)
    lp = se.max_value(_reduce(se.max_value, [l for w in (u_p, u_m) for l in spec(w, n)]), 0.0)
    lm = se.min_value(_reduce(se.min_value, [l for w in (u_p, u_m) for l in spec(w, n)]), 0.0)
    return lp, lm


def lax_friedrichs_flux(F_c, u_p, u_m, n, alpha) -> SymArray:
    return (normal_flux(F_c, u_p, n) + normal_flux(F_c, u_m, n) + (u_p - u_m) * alpha) * 0.5


def hlle_flux(F_c, u_p, u_m, n, spec) -> SymArray:
    """HLLE flux; falls back to the central flux when the wave fan collapses."""
    lp, lm = wave_speeds(spec, u_p, u_m, n)
    fp, fm = normal_flux(F_c, u_p, n), normal_flux(F_c, u_m, n)
    spread = lp - lm
    safe = se.conditional("gt", spread, HLLE_DEGENERACY_TOL, spread, 1.0)
    hlle = (fp * lp - fm * lm - (u_p - u_m) * (lp * lm)) / safe
    central = (fp + fm) * 0.5
    return se.as_vector([se.conditional("gt", spread, HLLE_DEGENERACY_TOL, a, b)
                         for a, b in zip(hlle.data, central.data)])


class ConvectiveFlux:
    """Numerical flux H(u+, u-, n); ``setup`` precedes ``interior``/``exterior``."""

    def __init__(self, eigenvalues=None):
        self.eigenvalues = None if eigenvalues is None else _as_spec(eigenvalues)
        self._ready = False

    def setup(self, F_c, u_p, u_m, n):
        self._ready = True

    def _check(self):
        if not self._ready:
            raise RuntimeError(f"{type(self).__name__}.setup() must be called first")

    def interior(self, F_c, u_p, u_m, n) -> SymArray:
        raise NotImplementedError

    def exterior(self, F_c, u_p, u_m, n) -> SymArray:
        return self.interior(F_c, u_p, u_m, n)


class LocalLaxFriedrichs(ConvectiveFlux):
    name = "lf"

    def __init__(self, eigenvalues, alpha=None):
        super().__init__(eigenvalues)
        self.user_alpha = alpha
        self.alpha = None

    def setup(self, F_c, u_p, u_m, n):
        super().setup(F_c, u_p, u_m, n)
        if self.user_alpha is not None:
            self.alpha = se.as_expr(self.user_alpha)
        else:
            self.alpha = dissipation_alpha(self.eigenvalues, u_p, u_m, n)

    def interior(self, F_c, u_p, u_m, n):
        self._check()
        return lax_friedrichs_flux(F_c, u_p, u_m, n, self.alpha)


class HLLE(ConvectiveFlux):
    name = "hlle"

    def interior(self, F_c, u_p, u_m, n):
        self._check()
        return hlle_flux(F_c, u_p, u_m, n, self.eigenvalues)


def exterior_flux(scheme: ConvectiveFlux, F_c, u_p, u_gamma, n) -> SymArray:
    """Boundary flux with the boundary state playing the exterior trace."""
    scheme.setup(F_c, u_p, u_gamma, n)
    return scheme.exterior(F_c, u_p, u_gamma, n)


def make_flux(name: str, eigenvalues) -> ConvectiveFlux:
    name = name.lower()
    if name == "lf":
        return LocalLaxFriedrichs(eigenvalues)
    if name == "hlle":
        return HLLE(eigenvalues)
    raise ValueError(f"unknown flux scheme {name!r}")


# ---------------------------------------------------------------------------
# numeric eigenvalue recovery


def polynomial_roots(coeffs, cluster_tol: float = 1e-5) -> np.ndarray:
    """Real parts of polynomial roots, with clustered (multiple) roots refined.

    A k-fold root splits into k computed roots with an O(eps^(1/k)) error;
    their mean is accurate to O(eps), and a few Newton steps on the
    (k-1)-th derivative polish it.
    """
    c = np.asarray(coeffs, dtype=float)
    raw = np.roots(c)
    scale = max(1.0, float(np.max(np.abs(raw)))) if raw.size else 1.0
    remaining = sorted(raw, key=lambda z: (z.real, z.imag))
    out = []
    while remaining:
        z0 = remaining.pop(0)
        group = [z0]
        keep = []
        for z in remaining:
            (group if abs(z - z0) < cluster_tol * scale else keep).append(z)
        remaining = keep
        k = len(group)
        r = np.mean(group).real
        p = np.polyder(c, k - 1) if k > 1 else c
        dp = np.polyder(p)
        for _ in range(5):
            dv = np.polyval(dp, r)
            if dv == 0:
                break
            step = np.polyval(p, r) / dv
            r -= step
            if abs(step) <= 1e-16 * max(1.0, abs(r)):
                break
        out.extend([r] * k)
    return np.sort(np.array(out))


def jacobian_eigenvalues(F_c, state, normal) -> np.ndarray:
    """Eigenvalues of B(state, normal) via Berkowitz coefficients, sorted."""
    m = len(state)
    u = se.as_vector([se.symbol(f"_s{j}") for j in range(m)])
    n = se.as_vector([se.symbol(f"_n{i}") for i in range(len(normal))])
    B = flux_jacobian_normal(F_c, u, n)
    bind = {u.data[j]: float(state[j]) for j in range(m)}
    bind.update({n.data[i]: float(normal[i]) for i in range(len(normal))})
    Bn = se.evaluate(B, bind)
    coeffs = se.berkowitz_charpoly(Bn.tolist())
    return polynomial_roots(coeffs)
