"""Residual and Jacobian assembly, Newton's method and error norms.

A form is compiled once into coefficient expressions: for every test
terminal ``s`` (a value or gradient component of the test field on a given
side) the residual coefficient ``dI/ds``, and for every pair of test and
direction terminals the Jacobian coefficient of the Gateaux derivative.
Coefficients are evaluated for all quadrature points of a measure in one
vectorised pass and contracted against basis tables.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import symexpr as se
from .dgcalc import CELL, INTERIOR, Field, Form, Measure, gateaux_derivative
from .femcore import DGSpace, facet_quadrature, reference_quadrature

log = logging.getLogger(__name__)

MAX_QUAD_ORDER = 40


class AssemblyError(ArithmeticError):
    """Evaluation failure at a quadrature point; ``entity`` is the cell or facet id."""

    def __init__(self, msg, entity=None, kind=None):
        super().__init__(msg)
        self.entity = entity
        self.kind = kind


class SolverError(RuntimeError):
    pass


@dataclass
class SolverInfo:
    converged: bool
    iterations: int
    residual_norm: float
    initial_norm: float
    history: list = field(default_factory=list)


class DiscreteField:
    """Coefficient vector of a DG function; layout ``(cell, basis, component)``."""

    def __init__(self, space: DGSpace, coefficients=None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.num_dofs)
        c = np.asarray(coefficients, dtype=float).reshape(-1)
        if c.size != space.num_dofs:
            raise ValueError(f"expected {space.num_dofs} coefficients, got {c.size}")
        self.coefficients = c
        self.solver_info: SolverInfo | None = None

    @property
    def array(self) -> np.ndarray:
        s = self.space
        return self.coefficients.reshape(s.mesh.num_cells, s.local_dim, s.m)

    def copy(self) -> "DiscreteField":
        return DiscreteField(self.space, self.coefficients.copy())

    def evaluate_reference(self, xhat) -> np.ndarray:
        """Values at shared reference points (nq, 2) -> (ncells, nq, m)."""
        phi = self.space.basis.values(np.asarray(xhat, dtype=float))
        return np.einsum("qb,cbm->cqm", phi, self.array)

    def __repr__(self):
        return f"DiscreteField(dofs={self.coefficients.size})"


# ---------------------------------------------------------------------------
# geometry tables


@dataclass
class _Side:
    cells: np.ndarray      # (N,)
    phi: np.ndarray        # (N, nq, nb) or (nq, nb)
    dphi: np.ndarray       # (N, nq, nb, 2)

    def stacked(self):
        """(N, nq, nb, 3): value then physical gradient slots."""
        phi = self.phi
        if phi.ndim == 2:
            phi = np.broadcast_to(phi, self.dphi.shape[:3])
        return np.concatenate([phi[..., None], self.dphi], axis=-1)


@dataclass
class _Tables:
    ids: np.ndarray
    x: np.ndarray          # (N, nq, 2)
    wJ: np.ndarray         # (N, nq)
    sides: dict            # side -> _Side
    normal: np.ndarray | None = None   # (N, 2)
    h: np.ndarray | None = None        # (N,)


def _order(space, quad_order):
    q = space.default_order() if quad_order is None else int(quad_order)
    return min(q, MAX_QUAD_ORDER)


def _tables(space: DGSpace, measure: Measure, order: int) -> _Tables:
    cache = space.__dict__.setdefault("_tables_cache", {})
    key = (measure.kind, measure.tag, order)
    if key not in cache:
        cache[key] = _build_tables(space, measure, order)
    return cache[key]


def _build_tables(space, measure, order):
    mesh, basis = space.mesh, space.basis
    if measure.kind == CELL:
        q = reference_quadrature(order)
        cells = np.arange(mesh.num_cells)
        x = space.to_physical(q.points)
        wJ = np.abs(space.detJ)[:, None] * q.weights[None, :]
        dphi = space.physical_gradients(basis.gradients(q.points))
        return _Tables(cells, x, wJ, {None: _Side(cells, basis.values(q.points), dphi)})
    q = facet_quadrature(order)
    if measure.kind == INTERIOR:
        ids = mesh.interior_facets
    else:
        ids = mesh.boundary_facets
        if measure.tag is not None:
            ids = ids[mesh.boundary_tags[ids] == measure.tag]
    p = mesh.vertices[mesh.facets[ids]]           # (N, 2, 2)
    t = q.points[:, 0] if q.points.ndim == 2 else q.points
    x = p[:, None, 0, :] + t[None, :, None] * (p[:, None, 1, :] - p[:, None, 0, :])
    length = mesh.facet_lengths()[ids]
    wJ = length[:, None] * q.weights[None, :]
    fc = mesh.facet_cells[ids]
    names = ("+", "-") if measure.kind == INTERIOR else (None,)
    sides = {}
    for slot, name in enumerate(names):
        cells = fc[:, slot]
        xr = space.to_reference(x, cells)
        sides[name] = _Side(cells, basis.values(xr),
                            space.physical_gradients(basis.gradients(xr), cells))
    return _Tables(ids, x, wJ, sides, mesh.facet_normals()[ids], mesh.facet_measure_h()[ids])


# ---------------------------------------------------------------------------
# form compilation


@dataclass
class _Kernel:
    measure: Measure
    sides: tuple
    test_slots: list       # (side, comp, slot)
    residual: list         # Expr per test slot
    pairs: list            # (test index, trial side, comp, slot)
    jacobian: list         # Expr per pair


def _terminal(name, side, comp, slot):
    if slot == 0:
        return se.field_value(name, comp, side)
    return se.field_grad(name, comp, slot - 1, side)


def _sides(measure):
    return ("+", "-") if measure.kind == INTERIOR else (None,)


def compile_form(form: Form, trial: Field | None = None, test: Field | None = None):
    trial = trial or form.trial
    test = test or form.test
    if trial is None or test is None:
        raise ValueError("form needs declared trial and test fields")
    key = ("kernels", trial.name, test.name)
    if key in form._compiled:
        return form._compiled[key]
    w = Field("_dir_" + trial.name, trial.m, trial.dim)
    J = gateaux_derivative(form, trial, w)
    kernels = []
    for measure in form.measures():
        I = form.integrand(measure)
        ID = J.integrand(measure)
        sides = _sides(measure)
        free = set(se.free_terminals(I)) | set(se.free_terminals(ID))
        slots, res, pairs, jac = [], [], [], []
        for s in sides:
            for j in range(test.m):
                for a in range(1 + test.dim):
                    t = _terminal(test.name, s, j, a)
                    if t not in free:
                        continue
                    idx = len(slots)
                    slots.append((s, j, a))
                    res.append(se.diff(I, t))
                    c = se.diff(ID, t)
                    if se.is_zero(c):
                        continue
                    cfree = set(se.free_terminals(c))
                    for s2 in sides:
                        for k in range(trial.m):
                            for b in range(1 + trial.dim):
                                tw = _terminal(w.name, s2, k, b)
                                if tw in cfree:
                                    pairs.append((idx, s2, k, b))
                                    jac.append(se.diff(c, tw))
        kernels.append(_Kernel(measure, sides, slots, res, pairs, jac))
    form._compiled[key] = (trial, test, kernels)
    return form._compiled[key]


# ---------------------------------------------------------------------------
# evaluation and assembly


def _bindings(tab: _Tables, trial: Field, coef, params):
    x = tab.x
    b = {se.coordinate(0): x[..., 0], se.coordinate(1): x[..., 1]}
    for side, sd in tab.sides.items():
        c = coef[sd.cells]                                         # (N, nb, m)
        if sd.phi.ndim == 2:
            vals = np.einsum("qb,nbm->nqm", sd.phi, c)
        else:
            vals = np.einsum("nqb,nbm->nqm", sd.phi, c)
        grads = np.einsum("nqbl,nbm->nqml", sd.dphi, c)
        for j in range(trial.m):
            b[se.field_value(trial.name, j, side)] = vals[..., j]
            for l in range(trial.dim):
                b[se.field_grad(trial.name, j, l, side)] = grads[..., j, l]
    if tab.normal is not None:
        nside = "+" if "+" in tab.sides else None
        for i in range(2):
            b[se.normal(i, nside)] = tab.normal[:, None, i]
        b[se.facet_size()] = tab.h[:, None]
    for k, v in (params or {}).items():
        b[se.symbol(k) if isinstance(k, str) else k] = v
    return b


def _evaluate(exprs, bindings, tab, measure):
    if not exprs:
        return []
    try:
        vals = se.evaluate(list(exprs), bindings)
    except se.EvaluationError as exc:
        N, nq = tab.wJ.shape
        ent = None
        if exc.index is not None and N:
            ent = int(tab.ids[min(exc.index // max(nq, 1), N - 1)])
        what = "cell" if measure.kind == CELL else "facet"
        raise AssemblyError(f"{exc} ({what} {ent})", ent, what) from exc
    shape = tab.wJ.shape
    return [np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals]


def _check_finite(arr, tab, measure):
    bad = ~np.isfinite(arr)
    if bad.any():
        n = np.argwhere(bad.reshape(len(tab.ids), -1).any(axis=1))[0, 0]
        what = "cell" if measure.kind == CELL else "facet"
        raise AssemblyError(f"non-finite integrand value ({what} {int(tab.ids[n])})",
                            int(tab.ids[n]), what)


def assemble(form: Form, u_h: DiscreteField, residual=True, jacobian=True,
             quad_order=None, params=None):
    """Residual vector and/or sparse Jacobian of ``form`` at ``u_h``."""
    space = u_h.space
    trial, test, kernels = compile_form(form)
    if trial.m != space.m or test.m != space.m:
        raise ValueError("field component count does not match the space")
    order = _order(space, quad_order)
    nb, m, nd = space.local_dim, space.m, space.num_dofs
    coef = u_h.array
    R = np.zeros(nd) if residual else None
    rows, cols, vals = [], [], []
    bidx = np.arange(nb)
    for ker in kernels:
        tab = _tables(space, ker.measure, order)
        if len(tab.ids) == 0:
            continue
        bind = _bindings(tab, trial, coef, params)
        exprs = (ker.residual if residual else []) + (ker.jacobian if jacobian else [])
        out = _evaluate(exprs, bind, tab, ker.measure)
        nres = len(ker.residual) if residual else 0
        stacked = {s: sd.stacked() for s, sd in tab.sides.items()}
        if residual:
            for (s, j, a), val in zip(ker.test_slots, out[:nres]):
                _check_finite(val, tab, ker.measure)
                loc = np.einsum("nq,nqb->nb", tab.wJ * val, stacked[s][..., a])
                dofs = (tab.sides[s].cells[:, None] * nb + bidx[None, :]) * m + j
                np.add.at(R, dofs.ravel(), loc.ravel())
        if jacobian and ker.pairs:
            jv = out[nres:]
            blocks = {}
            for (ti, s2, k, b), val in zip(ker.pairs, jv):
                s, j, a = ker.test_slots[ti]
                B = blocks.setdefault((s, s2), np.zeros(tab.wJ.shape + (m, 1 + test.dim,
                                                                        m, 1 + trial.dim)))
                B[:, :, j, a, k, b] += val
            for (s, s2), B in blocks.items():
                _check_finite(B, tab, ker.measure)
                loc = np.einsum("nqjakc,nqia,nqpc->nijpk", B * tab.wJ[..., None, None, None, None],
                                stacked[s], stacked[s2], optimize=True)
                rc = (tab.sides[s].cells[:, None, None] * nb + bidx[None, :, None]) * m \
                    + np.arange(m)[None, None, :]
                cc = (tab.sides[s2].cells[:, None, None] * nb + bidx[None, :, None]) * m \
                    + np.arange(m)[None, None, :]
                N = len(tab.ids)
                r = np.broadcast_to(rc.reshape(N, nb * m, 1), (N, nb * m, nb * m))
                c = np.broadcast_to(cc.reshape(N, 1, nb * m), (N, nb * m, nb * m))
                rows.append(r.ravel())
                cols.append(c.ravel())
                vals.append(loc.reshape(N, nb * m, nb * m).ravel())
    Jm = None
    if jacobian:
        if rows:
            Jm = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(nd, nd)).tocsr()
        else:
            Jm = sp.csr_matrix((nd, nd))
    return R, Jm


def assemble_residual(form: Form, u_h: DiscreteField, **kw) -> np.ndarray:
    """Vector of N(u_h; phi_i) over all global basis functions."""
    return assemble(form, u_h, residual=True, jacobian=False, **kw)[0]


def assemble_jacobian(form: Form, u_h: DiscreteField, **kw) -> sp.csr_matrix:
    """Sparse matrix of the Gateaux derivative N'(u_h)[phi_j; phi_i]."""
    return assemble(form, u_h, residual=False, jacobian=True, **kw)[1]


# ---------------------------------------------------------------------------
# Newton


def newton_solve(form: Form, u0: DiscreteField, tol_abs: float = 1e-10, tol_rel: float = 1e-9,
                 max_iter: int = 30, diagnostics=None, quad_order=None,
                 check_state: Callable | None = None) -> DiscreteField:
    """Full-step Newton iteration; the result carries ``solver_info``.

    ``diagnostics`` may be a writable text stream receiving CSV lines
    ``iteration,residual_norm,relative_norm,step_norm``. Non-convergence is
    reported through ``solver_info.converged``; a singular Jacobian raises
    :class:`SolverError`.
    """
    u = u0.copy()
    out = diagnostics if diagnostics is not None else io.StringIO()
    out.write("iteration,residual_norm,relative_norm,step_norm\n")
    history = []
    r0 = None
    step_norm = float("nan")
    it = 0
    while True:
        R, J = assemble(form, u, residual=True, jacobian=it < max_iter, quad_order=quad_order)
        rn = float(np.linalg.norm(R))
        r0 = rn if r0 is None else r0
        rel = rn / r0 if r0 > 0 else 0.0
        history.append(rn)
        out.write(f"{it},{rn:.16e},{rel:.16e},{step_norm:.16e}\n")
        log.debug("newton %d: |R| = %.3e", it, rn)
        if not np.isfinite(rn):
            break
        if rn <= tol_abs or rn <= tol_rel * r0:
            u.solver_info = SolverInfo(True, it, rn, r0, history)
            return u
        if it >= max_iter:
            break
        try:
            with np.errstate(all="ignore"):
                lu = spla.splu(J.tocsc())
                du = lu.solve(-R)
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian at Newton iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(du)):
            raise SolverError(f"non-finite Newton update at iteration {it}")
        u.coefficients += du
        step_norm = float(np.linalg.norm(du))
        it += 1
        if check_state is not None:
            check_state(u)
    u.solver_info = SolverInfo(False, it, history[-1], r0, history)
    return u


# ---------------------------------------------------------------------------
# error norms


def _exact_components(exact, m):
    if isinstance(exact, se.SymArray):
        comps = list(exact.data.flat)
    elif isinstance(exact, (list, tuple)):
        comps = [se.as_expr(e) for e in exact]
    else:
        comps = [se.as_expr(exact)]
    if len(comps) != m:
        raise se.ShapeError(f"exact solution needs {m} components")
    return comps


def error_norm(u_h: DiscreteField, exact, kind: str = "L2", quad_order=None) -> float:
    """||u - u_h|| in L2 or the broken H1 norm (L2 part plus gradient part)."""
    kind = kind.upper()
    if kind not in ("L2", "H1"):
        raise ValueError(f"unknown norm {kind!r}")
    space = u_h.space
    order = min(2 * space.degree + 4 if quad_order is None else quad_order, MAX_QUAD_ORDER)
    q = reference_quadrature(order)
    x = space.to_physical(q.points)
    comps = _exact_components(exact, space.m)
    X = [se.coordinate(0), se.coordinate(1)]
    bind = {X[0]: x[..., 0], X[1]: x[..., 1]}
    exprs = list(comps)
    if kind == "H1":
        exprs += [se.diff(c, xi) for c in comps for xi in X]
    vals = [np.broadcast_to(v, x.shape[:2]) for v in se.evaluate(exprs, bind)]
    w = np.abs(space.detJ)[:, None] * q.weights[None, :]
    coef = u_h.array
    uh = np.einsum("qb,cbm->cqm", space.basis.values(q.points), coef)
    total = 0.0
    for j in range(space.m):
        total += float(np.sum(w * (vals[j] - uh[..., j]) ** 2))
    if kind == "H1":
        dphi = space.physical_gradients(space.basis.gradients(q.points))
        guh = np.einsum("cqbl,cbm->cqml", dphi, coef)
        for j in range(space.m):
            for l in range(2):
                total += float(np.sum(w * (vals[space.m + 2 * j + l] - guh[..., j, l]) ** 2))
    return float(np.sqrt(total))


def convergence_rates(errors, h_list=None) -> list:
    """Observed orders log(e_k/e_{k+1}) / log(h_k/h_{k+1}) (log2 for halving)."""
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    if h_list is None:
        ratio = np.full(len(e) - 1, 2.0)
    else:
        h = np.asarray(h_list, dtype=float)
        ratio = h[:-1] / h[1:]
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))
