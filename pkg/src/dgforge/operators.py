"""Automatic generation of interior-penalty DG residual forms.

The building blocks are :class:`DGFemViscousTerm` (SIPG/NIPG/Baumann-Oden
facet terms for a viscous flux) and :func:`hyperbolic_residual` (numerical
flux terms for a convective flux). Operator classes compose them for a given
set of boundary conditions; :class:`OperatorSpec` is the declarative bundle
used by the problem registry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from . import symexpr as se
from .dgcalc import (EXTERIOR, Field, Form, FormError, Measure, avg, dg_outer, dS, ds,
                     dx, facet_normal, homogeneity_tensor, hyper_tensor_product,
                     hyper_tensor_T_product, tensor_jump)
from .fluxes import (ConvectiveFlux, LocalLaxFriedrichs, exterior_flux, flux_matrix,
                     make_flux, normal_flux)
from .symexpr import SymArray

DEFAULT_CIP = 10.0
GAMMA = 1.4
PRANDTL = 0.72


# ---------------------------------------------------------------------------
# boundary conditions


class DGBC:
    kind = ""

    def __init__(self, boundary: Measure, function):
        if boundary.kind != EXTERIOR:
            raise FormError("boundary conditions need a boundary measure")
        self.boundary = boundary
        self.function = function

    def get_boundary(self) -> Measure:
        return self.boundary

    def get_function(self):
        return self.function

    def __repr__(self):
        return f"{type(self).__name__}({self.boundary})"


class DGDirichletBC(DGBC):
    kind = "dirichlet"


class DGNeumannBC(DGBC):
    kind = "neumann"


def _check_regions(bcs):
    tags = [bc.boundary.tag for bc in bcs]
    if None in tags and len(tags) > 1:
        raise FormError("a whole-boundary condition overlaps other boundary conditions")
    if len(set(tags)) != len(tags):
        raise FormError("boundary conditions have overlapping regions")


def _vec(data, m) -> SymArray:
    if isinstance(data, SymArray):
        v = data
    elif isinstance(data, (list, tuple)):
        v = se.as_vector(data)
    else:
        v = se.as_vector([data])
    if v.shape != (m,):
        raise se.ShapeError(f"boundary data must have {m} components, got {v.shape}")
    return v


def penalty_coefficient(degree: int, c_ip: float = DEFAULT_CIP) -> se.Expr:
    """sigma = C_IP * max(l^2, 1) / h with h the facet length scale."""
    return se.const(c_ip * max(degree ** 2, 1)) / se.facet_size()


def _inner(a, b):
    return se.inner(a, b)


# ---------------------------------------------------------------------------
# viscous terms


class DGFemViscousTerm:
    """Facet terms for -div F_v(u, grad u).

    ``sym_sign`` multiplies the symmetrising term
    ``int [[u]] : {G^T grad v}`` (-1 SIPG, +1 NIPG/Baumann-Oden) and
    ``penalised`` toggles the interior-penalty term.
    """

    sym_sign = -1.0
    penalised = True

    def __init__(self, F_v, u: Field, v: Field, sigma, G=None, n=None):
        self.F_v = F_v
        self.u = u
        self.v = v
        self.sigma = se.as_expr(sigma)
        self.G = homogeneity_tensor(F_v, u) if G is None else G
        self.n = facet_normal(u.dim) if n is None else n

    def _flux(self, u, grad_u):
        F = self.F_v(u, grad_u)
        return flux_matrix(F, self.u.m, self.u.dim)

    def interior_residual(self, dInt: Measure = dS) -> Form:
        u, v, n, G = self.u, self.v, self.n, self.G
        jump_u = tensor_jump(u(), n)
        jump_v = tensor_jump(v(), n)
        sym = avg(hyper_tensor_T_product(G, v.grad()))
        flux = avg(self._flux(u(), u.grad()))
        integrand = (self.sym_sign * _inner(jump_u, sym)) - _inner(flux, jump_v)
        if self.penalised:
            integrand = integrand + self.sigma * _inner(
                hyper_tensor_product(avg(G), jump_u), jump_v)
        return Form([_term(integrand, dInt)], u, v)

    def boundary_G(self, u_gamma) -> SymArray:
        ug = _vec(u_gamma, self.u.m)
        return se.replace(self.G, {se.field_value(self.u.name, j): ug.data[j]
                                   for j in range(self.u.m)})

    def exterior_residual(self, u_gamma, dExt: Measure = ds) -> Form:
        u, v, n = self.u, self.v, self.n
        ug = _vec(u_gamma, u.m)
        G = self.boundary_G(ug)
        diff_n = dg_outer(u() - ug, n)
        vn = dg_outer(v(), n)
        integrand = (self.sym_sign * _inner(diff_n, hyper_tensor_T_product(G, v.grad()))
                     - _inner(hyper_tensor_product(G, u.grad()), vn))
        if self.penalised:
            integrand = integrand + self.sigma * _inner(hyper_tensor_product(G, diff_n), vn)
        return Form([_term(integrand, dExt)], u, v)

    def neumann_residual(self, g_N, dExt: Measure = ds) -> Form:
        g = _vec(g_N, self.u.m)
        return Form([_term(-se.dot(g, self.v()), dExt)], self.u, self.v)


class DGFemSIPG(DGFemViscousTerm):
    sym_sign = -1.0
    penalised = True


class DGFemNIPG(DGFemViscousTerm):
    sym_sign = 1.0
    penalised = True


class DGFemBO(DGFemViscousTerm):
    sym_sign = 1.0
    penalised = False


VARIANTS = {"sipg": DGFemSIPG, "nipg": DGFemNIPG, "bo": DGFemBO}


def _term(integrand, measure):
    from .dgcalc import FormTerm
    return FormTerm(integrand, measure)


def viscous_interior_residual(F_v, u, v, sigma, G=None, variant="sipg") -> Form:
    return VARIANTS[variant](F_v, u, v, sigma, G).interior_residual(dS)


# ---------------------------------------------------------------------------
# convective terms


def hyperbolic_residual(F_c, H: ConvectiveFlux, u: Field, v: Field, bcs=()) -> Form:
    """-int F_c(u) : grad v dx + interior and boundary numerical-flux terms."""
    n = facet_normal(u.dim)
    F = flux_matrix(F_c(u()), u.m, u.dim)
    form = Form([_term(-_inner(F, v.grad()), dx)], u, v)
    up, um, np_ = u("+"), u("-"), se.restrict(n, "+")
    H.setup(F_c, up, um, np_)
    Hi = H.interior(F_c, up, um, np_)
    form += Form([_term(se.dot(Hi, v("+") - v("-")), dS)], u, v)
    for bc in bcs:
        if bc.kind == "dirichlet":
            gD = _vec(bc.get_function(), u.m)
            He = exterior_flux(H, F_c, u(), gD, n)
            form += Form([_term(se.dot(He, v()), bc.get_boundary())], u, v)
        elif bc.kind == "neumann":
            form += Form([_term(se.dot(normal_flux(F_c, u(), n), v()), bc.get_boundary())],
                         u, v)
    return form


# ---------------------------------------------------------------------------
# operator hierarchy


class DGFemFormulation:
    def __init__(self, degree: int, bcs=()):
        if isinstance(bcs, DGBC):
            bcs = [bcs]
        self.degree = int(degree)
        self.bcs = list(bcs)
        _check_regions(self.bcs)

    @property
    def dirichlet_bcs(self):
        return [bc for bc in self.bcs if bc.kind == "dirichlet"]

    @property
    def neumann_bcs(self):
        return [bc for bc in self.bcs if bc.kind == "neumann"]

    def generate_fem_formulation(self, u: Field, v: Field) -> Form:
        raise NotImplementedError


class HyperbolicOperator(DGFemFormulation):
    def __init__(self, degree, bcs, F_c=lambda u: u, H=None):
        super().__init__(degree, bcs)
        self.F_c = F_c
        self.H = H if H is not None else LocalLaxFriedrichs(lambda u, n: se.inner(u, n))

    def generate_fem_formulation(self, u, v):
        return hyperbolic_residual(self.F_c, self.H, u, v, self.bcs)


class EllipticOperator(DGFemFormulation):
    def __init__(self, degree, bcs, F_v, C_IP=DEFAULT_CIP, variant="sipg"):
        super().__init__(degree, bcs)
        if C_IP <= 0 and variant != "bo":
            raise ValueError("C_IP must be positive")
        self.F_v = F_v
        self.C_IP = C_IP
        self.variant = variant

    def generate_fem_formulation(self, u, v, vt=None):
        sigma = penalty_coefficient(self.degree, self.C_IP)
        G = homogeneity_tensor(self.F_v, u)
        if vt is None:
            vt = VARIANTS[self.variant]
        if isinstance(vt, type):
            vt = vt(self.F_v, u, v, sigma, G)
        F = flux_matrix(self.F_v(u(), u.grad()), u.m, u.dim)
        form = Form([_term(_inner(F, v.grad()), dx)], u, v)
        form += vt.interior_residual(dS)
        for bc in self.dirichlet_bcs:
            form += vt.exterior_residual(bc.get_function(), bc.get_boundary())
        for bc in self.neumann_bcs:
            form += vt.neumann_residual(bc.get_function(), bc.get_boundary())
        return form


class PoissonOperator(EllipticOperator):
    def __init__(self, degree, bcs, kappa=1.0, **kw):
        def F_v(u, grad_u):
            k = kappa(u) if callable(kappa) else kappa
            return grad_u * k

        super().__init__(degree, bcs, F_v, **kw)


def burgers_flux(u):
    return se.as_matrix([[u[0] ** 2 / 2, u[0]]])


def burgers_eigenvalues(u, n):
    return [u[0] * n[0] + n[1]]


class SpacetimeBurgersOperator(HyperbolicOperator):
    def __init__(self, degree, bcs, flux=None):
        if flux is None:
            flux = LocalLaxFriedrichs(burgers_eigenvalues)
        super().__init__(degree, bcs, burgers_flux, flux)


# ---------------------------------------------------------------------------
# compressible flow


def _primitives(U, gamma):
    rho = U[0]
    u1, u2, E = U[1] / rho, U[2] / rho, U[3] / rho
    p = (gamma - 1.0) * rho * (E - 0.5 * (u1 ** 2 + u2 ** 2))
    return rho, u1, u2, E, p


def euler_flux(U, gamma=GAMMA) -> SymArray:
    """Ideal-gas Euler flux for conserved variables (rho, rho u1, rho u2, rho E)."""
    rho, u1, u2, E, p = _primitives(U, gamma)
    H = E + p / rho
    return se.as_matrix([[rho * u1, rho * u2],
                         [rho * u1 ** 2 + p, rho * u1 * u2],
                         [rho * u1 * u2, rho * u2 ** 2 + p],
                         [rho * H * u1, rho * H * u2]])


def euler_eigenvalues(U, n, gamma=GAMMA) -> list:
    rho, u1, u2, E, p = _primitives(U, gamma)
    un = u1 * n[0] + u2 * n[1]
    c = se.sqrt(gamma * p / rho)
    return [un - c, un, un + c]


def ns_viscous_flux(U, grad_U, mu=1.0, gamma=GAMMA, Pr=PRANDTL) -> SymArray:
    """Compressible Navier-Stokes viscous flux in conserved variables (d = 2)."""
    dim = 2
    rho = U[0]
    rhou = U[1:3]
    rhoE = U[3]
    u = rhou / rho
    grad_rho = grad_U[0, :]
    grad_rhou = grad_U[1:3, :]
    grad_rhoE = grad_U[3, :]
    # quotient rule for grad(u) and grad(E)
    grad_u = se.as_matrix([list(((grad_rhou[j, :] * rho) - grad_rho * rhou[j]) / rho ** 2)
                           for j in range(dim)])
    grad_E = (grad_rhoE * rho - grad_rho * rhoE) / rho ** 2
    tau = (grad_u + grad_u.T - se.identity(dim) * (2.0 / 3.0 * se.tr(grad_u))) * mu
    K_grad_T = (grad_E - se.dot(u, grad_u)) * (mu * gamma / Pr)
    return se.as_matrix([[0.0, 0.0],
                         [tau[0, 0], tau[0, 1]],
                         [tau[1, 0], tau[1, 1]],
                         [se.dot(tau[0, :], u) + K_grad_T[0],
                          se.dot(tau[1, :], u) + K_grad_T[1]]])


def slip_wall_reflection(n) -> SymArray:
    """Reflection of the momentum about the wall tangent (test helper)."""
    n0, n1 = n[0], n[1]
    return se.as_matrix([[1, 0, 0, 0],
                         [0, 1 - 2 * n0 ** 2, -2 * n0 * n1, 0],
                         [0, -2 * n0 * n1, 1 - 2 * n1 ** 2, 0],
                         [0, 0, 0, 1]])


def entropy_u_to_v(U, gamma=GAMMA) -> SymArray:
    rho, u1, u2, E, _ = _primitives(U, gamma)
    i = E - 0.5 * (u1 ** 2 + u2 ** 2)
    U1, U2, U3, U4 = U[0], U[1], U[2], U[3]
    s = se.ln((gamma - 1) * rho * i / U1 ** gamma)
    rhoi = rho * i
    return se.as_vector([(-U4 + rhoi * (gamma + 1 - s)) / rhoi,
                         U2 / rhoi, U3 / rhoi, -U1 / rhoi])


def entropy_v_to_u(V, gamma=GAMMA) -> SymArray:
    V1, V2, V3, V4 = V[0], V[1], V[2], V[3]
    s = gamma - V1 + (V2 ** 2 + V3 ** 2) / (2 * V4)
    rhoi = ((gamma - 1) / (-V4) ** gamma) ** (1.0 / (gamma - 1)) * se.exp(-s / (gamma - 1))
    U = se.as_vector([-V4, V2, V3, 1 - 0.5 * (V2 ** 2 + V3 ** 2) / V4])
    return U * rhoi


class CompressibleEulerOperator(HyperbolicOperator):
    def __init__(self, degree, bcs, gamma=GAMMA, flux="lf"):
        def F_c(U):
            return euler_flux(U, gamma)

        H = make_flux(flux, lambda U, n: euler_eigenvalues(U, n, gamma)) \
            if isinstance(flux, str) else flux
        super().__init__(degree, bcs, F_c, H)


class CompressibleNavierStokesOperator(CompressibleEulerOperator):
    def __init__(self, degree, bcs, mu=1.0, gamma=GAMMA, Pr=PRANDTL, C_IP=DEFAULT_CIP,
                 flux="lf", variant="sipg"):
        super().__init__(degree, bcs, gamma, flux)

        def F_v(U, grad_U):
            return ns_viscous_flux(U, grad_U, mu, gamma, Pr)

        self.elliptic = EllipticOperator(degree, bcs, F_v, C_IP, variant)

    def generate_fem_formulation(self, u, v):
        return (CompressibleEulerOperator.generate_fem_formulation(self, u, v)
                + self.elliptic.generate_fem_formulation(u, v))


# ---------------------------------------------------------------------------
# declarative specs


@dataclass
class OperatorSpec:
    """Convective and/or viscous operator plus boundary conditions and source.

    Residual: hyperbolic part + elliptic part - int f . v dx.
    """

    m: int
    bcs: Sequence[DGBC] = ()
    F_c: Callable | None = None
    eigenvalues: Callable | None = None
    flux_scheme: str = "lf"
    F_v: Callable | None = None
    C_IP: float = DEFAULT_CIP
    variant: str = "sipg"
    source: SymArray | None = None
    dim: int = 2

    def __post_init__(self):
        if self.F_c is None and self.F_v is None:
            raise ValueError("an operator needs a convective or a viscous flux")
        if self.F_c is not None and self.eigenvalues is None:
            raise ValueError("convective operators need an eigenvalue function")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown interior-penalty variant {self.variant!r}")
        if self.F_v is not None and self.variant != "bo" and self.C_IP <= 0:
            raise ValueError("C_IP must be positive")
        _check_regions(list(self.bcs))

    def trial_test(self):
        return Field("u", self.m, self.dim), Field("v", self.m, self.dim)

    def numerical_flux(self) -> ConvectiveFlux:
        return make_flux(self.flux_scheme, self.eigenvalues)

    def generate_form(self, degree: int, u: Field | None = None, v: Field | None = None) -> Form:
        if u is None or v is None:
            u, v = self.trial_test()
        form = Form((), u, v)
        if self.F_c is not None:
            form += HyperbolicOperator(degree, self.bcs, self.F_c,
                                       self.numerical_flux()).generate_fem_formulation(u, v)
        if self.F_v is not None:
            form += EllipticOperator(degree, self.bcs, self.F_v, self.C_IP,
                                     self.variant).generate_fem_formulation(u, v)
        if self.source is not None:
            f = _vec(self.source, self.m)
            form += Form([_term(-se.dot(f, v()), dx)], u, v)
        return form


def build_advection_diffusion(b, K, bcs=(), **kw) -> OperatorSpec:
    """-div(K grad u) + div(b u^2) = f with scalar u.

    ``K`` is a constant or a callable of the scalar state; ``b`` a constant
    vector. ``b = 0`` drops the convective part.
    """
    b = [float(x) for x in b]
    bv = se.as_vector(b)

    def F_v(u, grad_u):
        k = K(u[0]) if callable(K) else K
        return grad_u * k

    if all(x == 0.0 for x in b):
        return OperatorSpec(m=1, bcs=bcs, F_v=F_v, **kw)

    def F_c(u):
        return se.as_matrix([list(bv * u[0] ** 2)])

    def lam(u, n):
        return [2 * u[0] * se.dot(bv, n)]

    return OperatorSpec(m=1, bcs=bcs, F_c=F_c, eigenvalues=lam, F_v=F_v, **kw)


def manufactured_source(exact: SymArray, F_c=None, F_v=None, dim: int = 2) -> SymArray:
    """f = div(F_c(u) - F_v(u, grad u)) for an exact solution in coordinates."""
    x = [se.coordinate(i) for i in range(dim)]
    m = len(exact)
    grad = se.as_matrix([[se.diff(exact[j], x[l]) for l in range(dim)] for j in range(m)])
    total = None
    if F_c is not None:
        total = flux_matrix(F_c(exact), m, dim)
    if F_v is not None:
        fv = flux_matrix(F_v(exact, grad), m, dim)
        total = -fv if total is None else total - fv
    return se.as_vector([se.add(*[se.diff(total[i, k], x[k]) for k in range(dim)])
                         for i in range(m)])
