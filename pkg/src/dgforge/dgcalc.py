"""DG form vocabulary: fields, measures, forms, traces and homogeneity tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symexpr as se
from .symexpr import SymArray, ShapeError


class FormError(ValueError):
    pass


class Field:
    """Symbolic trial/test/direction function with ``m`` components in ``dim`` dims.

    ``u()`` is the value vector, ``u('+')`` its trace from the plus side and
    ``u.grad()`` the ``m x dim`` gradient matrix.
    """

    def __init__(self, name: str, m: int = 1, dim: int = 2):
        self.name = name
        self.m = int(m)
        self.dim = int(dim)

    def __call__(self, side=None) -> SymArray:
        return se.as_vector([se.field_value(self.name, j, side) for j in range(self.m)])

    def grad(self, side=None) -> SymArray:
        return se.as_matrix([[se.field_grad(self.name, j, l, side) for l in range(self.dim)]
                             for j in range(self.m)])

    def terminals(self, side=None) -> list:
        """Value terminals then gradient terminals, component-major."""
        out = []
        for j in range(self.m):
            out.append(se.field_value(self.name, j, side))
            out.extend(se.field_grad(self.name, j, l, side) for l in range(self.dim))
        return out

    def owns(self, t: se.Expr) -> bool:
        return t.op in ("value", "grad") and t.data[0] == self.name

    def __repr__(self):
        return f"Field({self.name!r}, m={self.m}, dim={self.dim})"


def facet_normal(dim: int = 2, side=None) -> SymArray:
    return se.as_vector([se.normal(i, side) for i in range(dim)])


def spatial_coordinate(dim: int = 2) -> SymArray:
    return se.as_vector([se.coordinate(i) for i in range(dim)])


# ---------------------------------------------------------------------------
# measures and forms

CELL, INTERIOR, EXTERIOR = "cell", "interior_facet", "exterior_facet"


@dataclass(frozen=True)
class Measure:
    kind: str
    tag: int | None = None

    def __post_init__(self):
        if self.kind not in (CELL, INTERIOR, EXTERIOR):
            raise FormError(f"unknown measure kind {self.kind!r}")
        if self.tag is not None and self.kind != EXTERIOR:
            raise FormError("only boundary measures carry region tags")

    def __call__(self, tag):
        return Measure(self.kind, tag)

    def __rmul__(self, integrand):
        return Form([FormTerm(integrand, self)])

    def __str__(self):
        if self.kind == CELL:
            return "dx"
        if self.kind == INTERIOR:
            return "dS"
        return "ds" if self.tag is None else f"ds({self.tag})"


dx = Measure(CELL)
dS = Measure(INTERIOR)
ds = Measure(EXTERIOR)


@dataclass(frozen=True, eq=False)
class FormTerm:
    integrand: se.Expr
    measure: Measure

    def __post_init__(self):
        if isinstance(self.integrand, SymArray):
            raise ShapeError("form integrands must be scalar")
        object.__setattr__(self, "integrand", se.as_expr(self.integrand))
        for t in se.free_terminals(self.integrand):
            side = _side_of(t)
            kind = self.measure.kind
            if kind == CELL and (t.op in ("normal", "h") or side is not None):
                raise FormError(f"cell integrand contains facet quantity {se.pretty(t)}")
            if kind == INTERIOR and t.op in ("value", "grad", "normal") and side is None:
                raise FormError(f"interior-facet integrand has unrestricted {se.pretty(t)}")
            if kind == EXTERIOR and side is not None:
                raise FormError(f"boundary integrand has restricted {se.pretty(t)}")


def _side_of(t):
    if t.op == "value":
        return t.data[2]
    if t.op == "grad":
        return t.data[3]
    if t.op == "normal":
        return t.data[1]
    return None


class Form:
    """Sum of integrals; zero integrands are dropped."""

    def __init__(self, terms=(), trial: Field | None = None, test: Field | None = None):
        self.terms = tuple(t for t in terms if not se.is_zero(t.integrand))
        self.trial = trial
        self.test = test
        self._compiled = {}

    def with_arguments(self, trial: Field, test: Field) -> "Form":
        for attr, f in (("trial", trial), ("test", test)):
            mine = getattr(self, attr)
            if mine is not None and mine.name != f.name:
                raise FormError(f"{attr} field mismatch: {mine.name} vs {f.name}")
        return Form(self.terms, trial, test)

    def _merge_decl(self, other):
        out = []
        for attr in ("trial", "test"):
            a, b = getattr(self, attr), getattr(other, attr)
            if a is not None and b is not None and (a.name != b.name or a.m != b.m):
                raise FormError(f"cannot combine forms with different {attr} fields")
            out.append(a if a is not None else b)
        return out

    def __add__(self, other):
        if isinstance(other, (int, float)) and other == 0:
            return self
        if not isinstance(other, Form):
            return NotImplemented
        trial, test = self._merge_decl(other)
        return Form(self.terms + other.terms, trial, test)

    __radd__ = __add__

    def __neg__(self):
        return Form([FormTerm(-t.integrand, t.measure) for t in self.terms],
                    self.trial, self.test)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        c = se.as_expr(c)
        return Form([FormTerm(c * t.integrand, t.measure) for t in self.terms],
                    self.trial, self.test)

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not self.terms

    def measures(self) -> list:
        seen = []
        for t in self.terms:
            if t.measure not in seen:
                seen.append(t.measure)
        return seen

    def integrand(self, measure: Measure) -> se.Expr:
        return se.add(*[t.integrand for t in self.terms if t.measure == measure])

    def __str__(self):
        return pretty_form(self)

    def __repr__(self):
        return f"Form({len(self.terms)} terms)"


def pretty_form(form: Form) -> str:
    """One term per line: ``<integrand> * <measure>``."""
    if form.is_zero():
        return "0"
    return "\n".join(f"{se.pretty(t.integrand)} * {t.measure}" for t in form.terms)


# ---------------------------------------------------------------------------
# averages and jumps


def _facet_kind(measure):
    if measure is None:
        return INTERIOR
    if measure.kind == CELL:
        raise FormError("averages and jumps are only defined on facets")
    return measure.kind


def avg(e, measure: Measure | None = None):
    """{e}: mean of the two traces on interior facets, ``e`` itself on the boundary."""
    if _facet_kind(measure) == EXTERIOR:
        return e
    return (se.restrict(e, "+") + se.restrict(e, "-")) * 0.5


def dg_outer(v, n) -> SymArray:
    v = v if isinstance(v, SymArray) else se.as_vector([v])
    return se.outer(v, n)


def tensor_jump(v, n, measure: Measure | None = None) -> SymArray:
    """[[v]] = v+ (x) n+ + v- (x) n- on interior facets, v (x) n on the boundary."""
    if _facet_kind(measure) == EXTERIOR:
        return dg_outer(v, n)
    return (dg_outer(se.restrict(v, "+"), se.restrict(n, "+"))
            + dg_outer(se.restrict(v, "-"), se.restrict(n, "-")))


# ---------------------------------------------------------------------------
# homogeneity tensors


def homogeneity_tensor(F_v, u: Field) -> SymArray:
    """G[k, l, i, j] = d(F_v)_{ik} / d(du_j/dx_l), a (d, d, m, m) array."""
    flux = F_v(u(), u.grad())
    flux = flux if isinstance(flux, SymArray) else se.as_matrix([[flux]])
    m, d = u.m, u.dim
    if flux.shape != (m, d):
        raise ShapeError(f"viscous flux must be {m}x{d}, got {flux.shape}")
    G = np.empty((d, d, m, m), dtype=object)
    for i in range(m):
        for k in range(d):
            f = flux.data[i, k]
            for j in range(m):
                for l in range(d):
                    G[k, l, i, j] = se.diff(f, se.field_grad(u.name, j, l))
    return SymArray(G)


def _check_G(G, tau, name):
    if not isinstance(G, SymArray) or G.ndim != 4:
        raise ShapeError(f"{name}: G must be a rank-4 array")
    d, _, m, _ = G.shape
    if tau.shape != (m, d):
        raise ShapeError(f"{name}: expected tau of shape {(m, d)}, got {tau.shape}")
    return d, m


def hyper_tensor_product(G, tau) -> SymArray:
    """(G tau)_{ik} = sum_{j,l} G[k, l, i, j] tau_{jl}."""
    d, m = _check_G(G, tau, "hyper_tensor_product")
    g, t = G.data, tau.data
    return se.as_matrix([[se.add(*[se.mul(g[k, l, i, j], t[j, l])
                                   for j in range(m) for l in range(d)])
                          for k in range(d)] for i in range(m)])


def hyper_tensor_T_product(G, tau) -> SymArray:
    """(G^T tau)_{jl} = sum_{i,k} G[k, l, i, j] tau_{ik}."""
    d, m = _check_G(G, tau, "hyper_tensor_T_product")
    g, t = G.data, tau.data
    return se.as_matrix([[se.add(*[se.mul(g[k, l, i, j], t[i, k])
                                   for i in range(m) for k in range(d)])
                          for l in range(d)] for j in range(m)])


def g_avg(G) -> SymArray:
    return avg(G)


# ---------------------------------------------------------------------------
# Gateaux derivative


def check_linear_in(integrand: se.Expr, test: Field) -> None:
    tests = [t for t in se.free_terminals(integrand) if test.owns(t)]
    for s in tests:
        coeff = se.diff(integrand, s)
        if any(test.owns(t) for t in se.free_terminals(coeff)):
            raise FormError("integrand is nonlinear in the test function")


def gateaux_derivative(N: Form, u: Field | None = None, w: Field | None = None) -> Form:
    """d/de N(u + e w; v) at e = 0, with ``w`` a fresh symbolic field."""
    u = u or N.trial
    if u is None:
        raise FormError("no trial field declared")
    if w is None:
        w = Field(f"d{u.name}", u.m, u.dim)
    terms = []
    for term in N.terms:
        if N.test is not None:
            check_linear_in(term.integrand, N.test)
        parts = []
        for t in sorted(se.free_terminals(term.integrand), key=lambda t: t.key):
            if not u.owns(t):
                continue
            d = t.data
            tw = (se.field_value(w.name, d[1], d[2]) if t.op == "value"
                  else se.field_grad(w.name, d[1], d[2], d[3]))
            parts.append(se.mul(se.diff(term.integrand, t), tw))
        terms.append(FormTerm(se.add(*parts), term.measure))
    return Form(terms, w, N.test)
