"""Registry of manufactured-solution test problems.

Each entry bundles a domain, an exact solution written in terms of the
spatial coordinates, and a factory producing an :class:`OperatorSpec` whose
source term is obtained by symbolic substitution of the exact solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from . import symexpr as se
from .dgcalc import ds, facet_normal, spatial_coordinate
from .femcore import BOTTOM, LEFT, RIGHT, TOP
from .fluxes import flux_matrix
from .operators import (DEFAULT_CIP, GAMMA, PRANDTL, DGDirichletBC, DGNeumannBC,
                        OperatorSpec, build_advection_diffusion, burgers_eigenvalues,
                        burgers_flux, euler_eigenvalues, euler_flux, manufactured_source,
                        ns_viscous_flux)


@dataclass(frozen=True)
class Problem:
    key: str
    m: int
    box: tuple
    exact: Callable[[], se.SymArray]
    factory: Callable[..., OperatorSpec]
    description: str = ""

    def spec(self, C_IP=DEFAULT_CIP, flux="lf", variant="sipg") -> OperatorSpec:
        return self.factory(C_IP=C_IP, flux=flux, variant=variant)


def _x():
    return spatial_coordinate(2)


# advection-diffusion ---------------------------------------------------------

def _advdiff_exact():
    x = _x()
    return se.as_vector([se.exp(x[0] - x[1])])


def _advdiff(C_IP, flux, variant):
    u = _advdiff_exact()
    K = lambda s: s + 1.0
    base = build_advection_diffusion((1.0, 1.0), K, C_IP=C_IP, variant=variant,
                                     flux_scheme=flux)
    f = manufactured_source(u, base.F_c, base.F_v)
    return build_advection_diffusion((1.0, 1.0), K, bcs=[DGDirichletBC(ds, u)], C_IP=C_IP,
                                     variant=variant, flux_scheme=flux, source=f)


# quasi-linear Poisson ----------------------------------------------------------

def _poisson_exact():
    x = _x()
    return se.as_vector([1.0 + 0.5 * se.sin(math.pi * x[0]) * se.cos(math.pi * x[1])
                         + 0.25 * x[0] * x[1]])


def _poisson_flux(u, grad_u):
    return grad_u * (u[0] + 1.0)


def _poisson(C_IP, flux, variant):
    u = _poisson_exact()
    x = _x()
    grad = se.as_matrix([[se.diff(u[0], x[0]), se.diff(u[0], x[1])]])
    f = manufactured_source(u, F_v=_poisson_flux)
    # Neumann data is the viscous normal flux of the exact solution
    g_N = se.dot(flux_matrix(_poisson_flux(u, grad), 1, 2), facet_normal(2))
    bcs = [DGDirichletBC(ds(LEFT), u), DGDirichletBC(ds(BOTTOM), u),
           DGDirichletBC(ds(TOP), u), DGNeumannBC(ds(RIGHT), g_N)]
    return OperatorSpec(m=1, bcs=bcs, F_v=_poisson_flux, C_IP=C_IP, variant=variant,
                        source=f)


# space-time Burgers --------------------------------------------------------------

def _burgers_exact():
    x = _x()
    return se.as_vector([1.0 + 0.5 * se.sin(math.pi * x[0]) * se.exp(-x[1])])


def _burgers(C_IP, flux, variant):
    u = _burgers_exact()
    f = manufactured_source(u, F_c=burgers_flux)
    return OperatorSpec(m=1, bcs=[DGDirichletBC(ds, u)], F_c=burgers_flux,
                        eigenvalues=burgers_eigenvalues, flux_scheme=flux, source=f)


# compressible Navier-Stokes -------------------------------------------------------

def _ns_exact():
    x = _x()
    s = se.sin(2.0 * (x[0] + x[1]))
    return se.as_vector([s + 4.0, 0.2 * s + 4.0, 0.2 * s + 4.0, (s + 4.0) ** 2])


def _ns(C_IP, flux, variant, mu=1.0, gamma=GAMMA, Pr=PRANDTL):
    u = _ns_exact()
    F_c = lambda U: euler_flux(U, gamma)
    F_v = lambda U, dU: ns_viscous_flux(U, dU, mu, gamma, Pr)
    lam = lambda U, n: euler_eigenvalues(U, n, gamma)
    f = manufactured_source(u, F_c, F_v)
    return OperatorSpec(m=4, bcs=[DGDirichletBC(ds, u)], F_c=F_c, eigenvalues=lam,
                        flux_scheme=flux, F_v=F_v, C_IP=C_IP, variant=variant, source=f)


PROBLEMS = {
    "advdiff": Problem("advdiff", 1, ((0.0, 0.0), (1.0, 1.0)), _advdiff_exact, _advdiff,
                       "-div((1+u) grad u) + div(b u^2) = f, b = (1, 1), u = exp(x - y)"),
    "poisson_quasilinear": Problem("poisson_quasilinear", 1, ((0.0, 0.0), (1.0, 1.0)),
                                   _poisson_exact, _poisson,
                                   "-div((u+1) grad u) = f, Neumann data on the right side"),
    "burgers_spacetime": Problem("burgers_spacetime", 1, ((0.0, 0.0), (1.0, 1.0)),
                                 _burgers_exact, _burgers,
                                 "u_t + (u^2/2)_x = f with t as the second coordinate"),
    "compressible_ns_mms": Problem("compressible_ns_mms", 4,
                                   ((0.0, 0.0), (math.pi, math.pi)), _ns_exact, _ns,
                                   "compressible Navier-Stokes, mu = 1, gamma = 1.4, Pr = 0.72"),
}


def get_problem(key: str) -> Problem:
    try:
        return PROBLEMS[key]
    except KeyError:
        raise KeyError(f"unknown problem {key!r}; known: {sorted(PROBLEMS)}") from None
