"""Immutable symbolic expression kernel.

Scalar expressions are hash-consed DAG nodes (:class:`Expr`); structurally equal
expressions are the same Python object, so identity doubles as structural
equality and derivative/evaluation caches can key on ``id``.  Vectors and
matrices are :class:`SymArray` containers of scalar nodes with strict shape
checking.

Construction applies a small set of local rewrite rules (flattening, constant
folding, 0/1 elimination, like-term and like-factor merging);
:func:`simplify` re-runs them bottom-up over an existing tree.
"""
from __future__ import annotations

import hashlib
import math
import numbers
import threading
import weakref
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Expr", "SymArray", "ShapeError", "EvaluationError", "UnboundSymbolError",
    "const", "symbol", "coordinate", "field_value", "field_grad", "normal",
    "facet_size", "as_expr", "exp", "ln", "sin", "cos", "sqrt", "absolute",
    "sign", "max_value", "min_value", "conditional", "diff", "jacobian",
    "berkowitz_charpoly", "evaluate", "simplify", "replace", "restrict",
    "free_terminals", "is_zero", "as_vector", "as_matrix", "dot", "inner",
    "outer", "tr", "identity", "pretty",
]


class ShapeError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    """Raised when a subexpression leaves its domain during evaluation.

    ``index`` is the flat index of the first offending entry when evaluating
    over arrays, or ``None`` for scalar evaluation.
    """

    def __init__(self, message, expr=None, index=None):
        super().__init__(message)
        self.expr = expr
        self.index = index


class UnboundSymbolError(KeyError):
    pass


# ---------------------------------------------------------------------------
# node storage

TERMINALS = frozenset({"const", "symbol", "coord", "value", "grad", "normal", "h"})
_FUNCTIONS = frozenset({"exp", "ln", "sin", "cos", "sqrt", "abs", "sign"})
_RANK = {"const": 0, "symbol": 1, "coord": 1, "value": 1, "grad": 1, "normal": 1,
         "h": 1, "pow": 2, "quotient": 3, "exp": 4, "ln": 4, "sin": 4, "cos": 4,
         "sqrt": 4, "abs": 4, "sign": 4, "max": 5, "min": 5, "cond": 5,
         "product": 6, "sum": 7}

_table: "weakref.WeakValueDictionary[str, Expr]" = weakref.WeakValueDictionary()
_lock = threading.Lock()


def _data_repr(op, data):
    if op == "const":
        return float(data).hex()
    return repr(data)


class Expr:
    """Scalar symbolic expression node. Never instantiate directly."""

    __slots__ = ("op", "args", "data", "key", "__weakref__")
    __array_priority__ = 100.0

    op: str
    args: tuple
    data: object
    key: str

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return add(self, other)

    def __radd__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return add(other, self)

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return add(self, neg(other))

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return add(other, neg(self))

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return mul(self, other)

    def __rmul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return mul(other, self)

    def __truediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return quotient(self, other)

    def __rtruediv__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return quotient(other, self)

    def __pow__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return power(self, other)

    def __rpow__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return power(other, self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    def __abs__(self):
        return absolute(self)

    def __call__(self, side):
        return restrict(self, side)

    def __bool__(self):
        raise TypeError("truth value of a symbolic expression is undefined")

    @property
    def shape(self):
        return ()

    @property
    def value(self) -> float:
        if self.op != "const":
            raise TypeError("not a constant")
        return self.data

    def is_const(self, v=None) -> bool:
        return self.op == "const" and (v is None or self.data == v)

    def __repr__(self):
        return f"Expr({pretty(self)})"

    def __str__(self):
        return pretty(self)

    def __reduce__(self):
        return (_make, (self.op, self.args, self.data))


def _make(op, args=(), data=None):
    h = hashlib.blake2b(digest_size=12)
    h.update(op.encode())
    h.update(_data_repr(op, data).encode())
    for a in args:
        h.update(a.key.encode())
    key = h.hexdigest()
    with _lock:
        node = _table.get(key)
        if node is None:
            node = object.__new__(Expr)
            node.op = op
            node.args = tuple(args)
            node.data = data
            node.key = key
            _table[key] = node
    return node


def _sort_key(e: Expr):
    return (_RANK[e.op], e.key)


def _coerce(x):
    if isinstance(x, Expr):
        return x
    if isinstance(x, numbers.Real) and not isinstance(x, bool):
        return const(x)
    if isinstance(x, np.generic) and np.isrealobj(x):
        return const(float(x))
    return NotImplemented


def as_expr(x) -> Expr:
    e = _coerce(x)
    if e is NotImplemented:
        raise TypeError(f"cannot convert {type(x).__name__} to a scalar expression")
    return e


# ---------------------------------------------------------------------------
# terminals

def const(v) -> Expr:
    v = float(v)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _make("const", (), v)


ZERO = None  # set below
ONE = None


def symbol(name: str) -> Expr:
    return _make("symbol", (), str(name))


def coordinate(i: int) -> Expr:
    return _make("coord", (), int(i))


def field_value(field: str, comp: int, side=None) -> Expr:
    _check_side(side)
    return _make("value", (), (field, int(comp), side))


def field_grad(field: str, comp: int, dim: int, side=None) -> Expr:
    _check_side(side)
    return _make("grad", (), (field, int(comp), int(dim), side))


def normal(i: int, side=None) -> Expr:
    """Facet normal component; ``n('-')`` is canonicalised to ``-n('+')``."""
    _check_side(side)
    if side == "-":
        return neg(_make("normal", (), (int(i), "+")))
    return _make("normal", (), (int(i), side))


def facet_size() -> Expr:
    """Facet length scale: min adjacent cell area over facet length."""
    return _make("h", (), None)


def _check_side(side):
    if side not in (None, "+", "-"):
        raise ValueError(f"invalid restriction {side!r}")


# ---------------------------------------------------------------------------
# smart constructors


def _split_coeff(e: Expr):
    """Return ``(c, rest)`` with ``e == c * rest`` and ``rest`` non-constant."""
    if e.op == "product" and e.args[0].op == "const":
        rest = e.args[1:]
        return e.args[0].data, rest[0] if len(rest) == 1 else _make("product", rest)
    return 1.0, e


def add(*terms) -> Expr:
    flat = []
    for t in terms:
        t = as_expr(t)
        if t.op == "sum":
            flat.extend(t.args)
        else:
            flat.append(t)
    c0 = 0.0
    coeffs: dict = {}
    order = []
    for t in flat:
        if t.op == "const":
            c0 += t.data
            continue
        c, rest = _split_coeff(t)
        if rest.key in coeffs:
            coeffs[rest.key][1] += c
        else:
            coeffs[rest.key] = [rest, c]
            order.append(rest.key)
    out = []
    for k in order:
        rest, c = coeffs[k]
        if c == 0.0:
            continue
        out.append(rest if c == 1.0 else mul(const(c), rest))
    if c0 != 0.0:
        out.append(const(c0))
    if not out:
        return const(0.0)
    if len(out) == 1:
        return out[0]
    out.sort(key=_sort_key)
    return _make("sum", out)


def _base_exp(e: Expr):
    if e.op == "pow":
        return e.args[0], e.args[1]
    return e, None


def mul(*factors) -> Expr:
    flat = []
    for f in factors:
        f = as_expr(f)
        if f.op == "product":
            flat.extend(f.args)
        else:
            flat.append(f)
    c = 1.0
    bases: dict = {}
    order = []
    for f in flat:
        if f.op == "const":
            c *= f.data
            continue
        b, e = _base_exp(f)
        if b.key in bases:
            entry = bases[b.key]
            entry[1].append(e)
        else:
            bases[b.key] = [b, [e]]
            order.append(b.key)
    if c == 0.0:
        return const(0.0)
    out = []
    for k in order:
        b, exps = bases[k]
        if len(exps) == 1:
            out.append(b if exps[0] is None else _make("pow", (b, exps[0])))
            continue
        total = add(*[const(1.0) if e is None else e for e in exps])
        f = power(b, total)
        if f.op == "const":
            c *= f.data
        else:
            out.append(f)
    if c == 0.0:
        return const(0.0)
    if not out:
        return const(c)
    out.sort(key=_sort_key)
    if c != 1.0:
        out.insert(0, const(c))
    if len(out) == 1:
        return out[0]
    return _make("product", out)


def neg(a) -> Expr:
    return mul(const(-1.0), a)


def sub(a, b) -> Expr:
    return add(a, neg(b))


def quotient(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if b.op == "const":
        if b.data == 1.0:
            return a
        if b.data != 0.0:
            return mul(const(1.0 / b.data), a)
    if a.op == "const" and a.data == 0.0:
        return a
    if a is b:
        return const(1.0)
    ca, ra = _split_coeff(a) if a.op != "const" else (a.data, None)
    if ca != 1.0 and ra is not None:
        return mul(const(ca), quotient(ra, b))
    return _make("quotient", (a, b))


def power(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if b.op == "const":
        if b.data == 0.0:
            return const(1.0)
        if b.data == 1.0:
            return a
        if a.op == "const":
            try:
                v = a.data ** b.data
            except (ZeroDivisionError, OverflowError):
                v = None
            if isinstance(v, float) and math.isfinite(v):
                return const(v)
        if a.op == "pow" and a.args[1].op == "const" and float(b.data).is_integer():
            return power(a.args[0], const(a.args[1].data * b.data))
    if a.op == "const" and a.data == 1.0:
        return a
    return _make("pow", (a, b))


def _unary(op, fn):
    def build(a) -> Expr:
        a = as_expr(a)
        if a.op == "const":
            try:
                v = fn(a.data)
            except (ValueError, OverflowError):
                v = None
            if v is not None and math.isfinite(v):
                return const(v)
        return _make(op, (a,))
    build.__name__ = op
    return build


def _sign(x):
    return float((x > 0) - (x < 0))


exp = _unary("exp", math.exp)
ln = _unary("ln", lambda x: math.log(x) if x > 0 else None)
sin = _unary("sin", math.sin)
cos = _unary("cos", math.cos)
sign = _unary("sign", _sign)
_sqrt_raw = _unary("sqrt", lambda x: math.sqrt(x) if x >= 0 else None)
_abs_raw = _unary("abs", abs)


def sqrt(a) -> Expr:
    return _sqrt_raw(a)


def absolute(a) -> Expr:
    a = as_expr(a)
    if a.op in ("abs", "exp", "sqrt"):
        return a
    return _abs_raw(a)


def max_value(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a is b:
        return a
    if a.op == "const" and b.op == "const":
        return const(max(a.data, b.data))
    return _make("max", (a, b))


def min_value(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a is b:
        return a
    if a.op == "const" and b.op == "const":
        return const(min(a.data, b.data))
    return _make("min", (a, b))


_RELATIONS = {"gt": np.greater, "ge": np.greater_equal,
              "lt": np.less, "le": np.less_equal}


def conditional(relation: str, lhs, rhs, if_true, if_false) -> Expr:
    """``if_true`` where ``lhs <relation> rhs`` holds pointwise, else ``if_false``."""
    if relation not in _RELATIONS:
        raise ValueError(f"unknown relation {relation!r}")
    lhs, rhs, t, f = map(as_expr, (lhs, rhs, if_true, if_false))
    if t is f:
        return t
    if lhs.op == "const" and rhs.op == "const":
        return t if bool(_RELATIONS[relation](lhs.data, rhs.data)) else f
    return _make("cond", (lhs, rhs, t, f), relation)


ZERO = const(0.0)
ONE = const(1.0)


def is_zero(e) -> bool:
    return isinstance(e, Expr) and e.op == "const" and e.data == 0.0


# ---------------------------------------------------------------------------
# traversal helpers


def _postorder(roots: Iterable[Expr]):
    seen = set()
    order = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for a in reversed(node.args):
                if id(a) not in seen:
                    stack.append((a, False))
    return order


def _rebuild(node: Expr, args) -> Expr:
    op = node.op
    if op == "sum":
        return add(*args)
    if op == "product":
        return mul(*args)
    if op == "quotient":
        return quotient(*args)
    if op == "pow":
        return power(*args)
    if op == "max":
        return max_value(*args)
    if op == "min":
        return min_value(*args)
    if op == "cond":
        return conditional(node.data, *args)
    if op == "abs":
        return absolute(args[0])
    return _UNARY_BUILD[op](args[0])


_UNARY_BUILD = {"exp": exp, "ln": ln, "sin": sin, "cos": cos, "sqrt": sqrt, "sign": sign}


def _map_terminals(roots, fn):
    """Rebuild ``roots`` with every terminal ``t`` replaced by ``fn(t)``."""
    out = {}
    for node in _postorder(roots):
        if node.op in TERMINALS:
            out[id(node)] = fn(node)
        else:
            args = [out[id(a)] for a in node.args]
            if all(x is y for x, y in zip(args, node.args)):
                out[id(node)] = node
            else:
                out[id(node)] = _rebuild(node, args)
    return out


def free_terminals(e) -> set:
    """Set of non-constant terminal nodes appearing in ``e`` (scalar or array)."""
    roots = _roots(e)
    return {n for n in _postorder(roots) if n.op in TERMINALS and n.op != "const"}


def _roots(e):
    if isinstance(e, SymArray):
        return list(e.data.flat)
    if isinstance(e, Expr):
        return [e]
    return [as_expr(x) for x in e]


def _apply(e, fn_roots):
    """Apply a node map to scalar or array input, preserving container type."""
    if isinstance(e, SymArray):
        flat = list(e.data.flat)
        mapping = fn_roots(flat)
        return SymArray(np.array([mapping[id(x)] for x in flat], dtype=object)
                        .reshape(e.shape))
    e = as_expr(e)
    return fn_roots([e])[id(e)]


def replace(e, mapping: Mapping):
    """Substitute terminals according to ``mapping`` (terminal -> expression)."""
    table = {id(k): as_expr(v) for k, v in mapping.items()}
    return _apply(e, lambda roots: _map_terminals(roots, lambda t: table.get(id(t), t)))


def restrict(e, side: str):
    """Restrict every unrestricted field/normal terminal to the given trace side.

    Terminals that already carry a side keep it, so restricting twice is
    idempotent. Coordinates and the facet size are single-valued on a facet.
    """
    _check_side(side)
    if side is None:
        return e

    def fn(t):
        if t.op == "value" and t.data[2] is None:
            return field_value(t.data[0], t.data[1], side)
        if t.op == "grad" and t.data[3] is None:
            return field_grad(t.data[0], t.data[1], t.data[2], side)
        if t.op == "normal" and t.data[1] is None:
            return normal(t.data[0], side)
        return t
    return _apply(e, lambda roots: _map_terminals(roots, fn))


def simplify(e):
    """Re-apply the local rewrite rules bottom-up. Semantics preserving."""
    def run(roots):
        out = {}
        for node in _postorder(roots):
            if node.op in TERMINALS:
                out[id(node)] = node
            else:
                out[id(node)] = _rebuild(node, [out[id(a)] for a in node.args])
        return out
    return _apply(e, run)


# ---------------------------------------------------------------------------
# differentiation

_DIFFERENTIABLE = frozenset({"symbol", "coord", "value", "grad", "normal"})


def diff(e, v):
    """Partial derivative of ``e`` with respect to the terminal ``v``.

    All terminals are treated as independent variables. Non-smooth nodes use
    ``sign(0) = 0``; ``max``/``min`` follow the first argument on ties.
    """
    if isinstance(v, SymArray):
        raise ShapeError("differentiate with respect to a scalar terminal; use jacobian")
    v = as_expr(v)
    if v.op not in _DIFFERENTIABLE:
        raise ValueError(f"cannot differentiate with respect to {pretty(v)}")
    return _apply(e, lambda roots: _diff_map(roots, v))


def _diff_map(roots, v):
    d = {}
    out = {}
    for node in _postorder(roots):
        if node.op in TERMINALS:
            d[id(node)] = ONE if node is v else ZERO
        else:
            d[id(node)] = _diff_node(node, [d[id(a)] for a in node.args])
        out[id(node)] = d[id(node)]
    return out


def _diff_node(node: Expr, da) -> Expr:
    if all(is_zero(x) for x in da):
        return ZERO
    op, a = node.op, node.args
    if op == "sum":
        return add(*da)
    if op == "product":
        terms = []
        for i, di in enumerate(da):
            if is_zero(di):
                continue
            terms.append(mul(di, *(a[:i] + a[i + 1:])))
        return add(*terms)
    if op == "quotient":
        num, den = a
        dn, dd = da
        return sub(quotient(dn, den), quotient(mul(num, dd), power(den, const(2.0))))
    if op == "pow":
        base, ex = a
        db, de = da
        if ex.op == "const":
            return mul(ex, power(base, const(ex.data - 1.0)), db)
        t1 = mul(node, de, ln(base)) if not is_zero(de) else ZERO
        t2 = mul(node, ex, quotient(db, base)) if not is_zero(db) else ZERO
        return add(t1, t2)
    if op == "exp":
        return mul(node, da[0])
    if op == "ln":
        return quotient(da[0], a[0])
    if op == "sin":
        return mul(cos(a[0]), da[0])
    if op == "cos":
        return neg(mul(sin(a[0]), da[0]))
    if op == "sqrt":
        return quotient(da[0], mul(const(2.0), node))
    if op == "abs":
        return mul(sign(a[0]), da[0])
    if op == "sign":
        return ZERO
    if op == "max":
        return conditional("ge", a[0], a[1], da[0], da[1])
    if op == "min":
        return conditional("le", a[0], a[1], da[0], da[1])
    if op == "cond":
        return conditional(node.data, a[0], a[1], da[2], da[3])
    raise AssertionError(op)


def jacobian(F, u) -> "SymArray":
    """Matrix of partial derivatives ``J[i, j] = dF_i/du_j``."""
    F = F if isinstance(F, SymArray) else as_vector(F)
    u = u if isinstance(u, SymArray) else as_vector(u)
    if F.ndim != 1 or u.ndim != 1:
        raise ShapeError(f"jacobian needs vectors, got {F.shape} and {u.shape}")
    rows = []
    for fi in F.data:
        rows.append([diff(fi, uj) for uj in u.data])
    return as_matrix(rows)


# ---------------------------------------------------------------------------
# characteristic polynomial


def berkowitz_charpoly(M) -> list:
    """Coefficients of ``det(lambda*I - M)``, highest degree first.

    Division free, so integer input yields exact integer coefficients and
    symbolic input yields polynomial expressions in the entries.
    """
    if isinstance(M, SymArray):
        A = M.data
    else:
        A = np.empty((len(M), len(M[0]) if len(M) else 0), dtype=object)
        for i, row in enumerate(M):
            for j, x in enumerate(row):
                A[i, j] = x
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"characteristic polynomial needs a square matrix, got {A.shape}")
    n = A.shape[0]
    if n == 0:
        return [1]
    # vector for the trailing 1x1 block, grown one leading row/column at a time
    poly = [1, -A[n - 1, n - 1]]
    for k in range(n - 2, -1, -1):
        a = A[k, k]
        R = list(A[k, k + 1:])
        C = list(A[k + 1:, k])
        sub_block = A[k + 1:, k + 1:]
        size = n - k
        col = [1, -a]
        vec = C
        for _ in range(size - 1):
            col.append(-_dot(R, vec))
            vec = [_dot(list(sub_block[i, :]), vec) for i in range(size - 1)]
        poly = _toeplitz_apply(col, poly)
    return poly


def _dot(a, b):
    total = 0
    for x, y in zip(a, b):
        total = total + x * y
    return total


def _toeplitz_apply(col, vec):
    # lower-triangular Toeplitz with first column ``col`` (len n+1), shape (n+1, n)
    out = []
    for i in range(len(col)):
        total = 0
        for j in range(len(vec)):
            if i - j >= 0:
                total = total + col[i - j] * vec[j]
        out.append(total)
    return out


# ---------------------------------------------------------------------------
# numeric evaluation


def evaluate(e, bindings: Mapping, cache: dict | None = None):
    """Evaluate ``e`` (scalar, SymArray or list of scalars) numerically.

    ``bindings`` maps terminal nodes (or symbol names) to numbers or numpy
    arrays; array bindings broadcast against each other. ``cache`` may be
    shared across calls with the same bindings.
    """
    table = {}
    for k, v in bindings.items():
        if isinstance(k, str):
            k = symbol(k)
        table[id(k)] = v
    if cache is None:
        cache = {}
    roots = _roots(e)
    for node in _postorder(roots):
        if id(node) in cache:
            continue
        cache[id(node)] = _eval_node(node, cache, table)
    if isinstance(e, SymArray):
        vals = [cache[id(x)] for x in e.data.flat]
        if all(np.ndim(v) == 0 for v in vals):
            return np.array(vals, dtype=float).reshape(e.shape)
        vals = np.broadcast_arrays(*vals)
        return np.stack(vals, axis=-1).reshape(vals[0].shape + e.shape)
    if isinstance(e, Expr):
        return cache[id(e)]
    return [cache[id(x)] for x in roots]


def _first_bad(mask):
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return None
    return int(np.flatnonzero(mask.ravel())[0])


def _domain_error(node, what, mask):
    text = pretty(node)
    if len(text) > 200:
        text = text[:200] + "..."
    raise EvaluationError(f"{what} in {text}", node, _first_bad(mask))


def _eval_node(node, cache, table):
    op = node.op
    if op == "const":
        return node.data
    if op in TERMINALS:
        try:
            return table[id(node)]
        except KeyError:
            raise UnboundSymbolError(f"unbound terminal {pretty(node)}") from None
    a = [cache[id(x)] for x in node.args]
    if op == "sum":
        out = a[0]
        for x in a[1:]:
            out = out + x
        return out
    if op == "product":
        out = a[0]
        for x in a[1:]:
            out = out * x
        return out
    if op == "quotient":
        bad = a[1] == 0
        if np.any(bad):
            _domain_error(node, "division by zero", bad)
        return a[0] / a[1]
    if op == "pow":
        base, ex = a
        if node.args[1].op == "const":
            p = node.args[1].data
            if p == 2.0:
                return base * base
            if not p.is_integer():
                bad = base < 0
                if np.any(bad):
                    _domain_error(node, "negative base with fractional exponent", bad)
            if p < 0:
                bad = base == 0
                if np.any(bad):
                    _domain_error(node, "zero base with negative exponent", bad)
            return np.power(base, p)
        bad = base <= 0
        if np.any(bad):
            _domain_error(node, "non-positive base with symbolic exponent", bad)
        return np.power(base, ex)
    if op == "exp":
        return np.exp(a[0])
    if op == "ln":
        bad = a[0] <= 0
        if np.any(bad):
            _domain_error(node, "logarithm of non-positive value", bad)
        return np.log(a[0])
    if op == "sqrt":
        bad = a[0] < 0
        if np.any(bad):
            _domain_error(node, "square root of negative value", bad)
        return np.sqrt(a[0])
    if op == "sin":
        return np.sin(a[0])
    if op == "cos":
        return np.cos(a[0])
    if op == "abs":
        return np.abs(a[0])
    if op == "sign":
        return np.sign(a[0])
    if op == "max":
        return np.where(a[0] >= a[1], a[0], a[1])
    if op == "min":
        return np.where(a[0] <= a[1], a[0], a[1])
    if op == "cond":
        return np.where(_RELATIONS[node.data](a[0], a[1]), a[2], a[3])
    raise AssertionError(op)


# ---------------------------------------------------------------------------
# pretty printing

_PREC = {"sum": 1, "product": 2, "quotient": 2, "neg": 2, "pow": 3}


def _fmt_const(v):
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".17g")


def _side(s):
    return "" if s is None else f"({s})"


def pretty(e) -> str:
    """Deterministic infix text; traces carry ``(+)``/``(-)`` markers."""
    if isinstance(e, SymArray):
        return _pretty_array(e.data)
    e = as_expr(e)
    text = {}
    prec = {}
    for node in _postorder([e]):
        t, p = _pretty_node(node, text, prec)
        text[id(node)] = t
        prec[id(node)] = p
    return text[id(e)]


def _pretty_array(a):
    if a.ndim == 1:
        return "[" + ", ".join(pretty(x) for x in a) + "]"
    return "[" + ", ".join(_pretty_array(r) for r in a) + "]"


def _wrap(node, text, prec, level):
    t = text[id(node)]
    return f"({t})" if prec[id(node)] < level else t


def _pretty_node(node, text, prec):
    op, d = node.op, node.data
    if op == "const":
        s = _fmt_const(d)
        return s, (4 if d >= 0 else 1)
    if op == "symbol":
        return d, 4
    if op == "coord":
        return f"x[{d}]", 4
    if op == "value":
        return f"{d[0]}[{d[1]}]{_side(d[2])}", 4
    if op == "grad":
        return f"grad({d[0]})[{d[1]},{d[2]}]{_side(d[3])}", 4
    if op == "normal":
        return f"n[{d[0]}]{_side(d[1])}", 4
    if op == "h":
        return "h_F", 4
    a = node.args
    if op == "sum":
        parts = [_wrap(a[0], text, prec, 1)]
        for x in a[1:]:
            c, rest = _split_coeff(x)
            if c < 0:
                if c == -1.0:
                    parts.append(" - " + _wrap(rest, text, prec, 2) if rest.op != "product"
                                 else " - " + _product_text(rest, text, prec))
                else:
                    parts.append(" - " + _fmt_const(-c) + "*" + _wrap(rest, text, prec, 3))
            else:
                parts.append(" + " + _wrap(x, text, prec, 1.5))
        return "".join(parts), 1
    if op == "product":
        if a[0].op == "const" and a[0].data == -1.0:
            rest = a[1:]
            body = "*".join(_wrap(x, text, prec, 3) for x in rest)
            return "-" + body, 1.5
        return _product_text(node, text, prec), 2
    if op == "quotient":
        return f"{_wrap(a[0], text, prec, 2)}/{_wrap(a[1], text, prec, 3)}", 2
    if op == "pow":
        return f"{_wrap(a[0], text, prec, 4)}**{_wrap(a[1], text, prec, 4)}", 3
    if op in ("max", "min"):
        return f"{op}({text[id(a[0])]}, {text[id(a[1])]})", 4
    if op == "cond":
        rel = {"gt": ">", "ge": ">=", "lt": "<", "le": "<="}[d]
        return (f"({text[id(a[2])]} if {text[id(a[0])]} {rel} {text[id(a[1])]} "
                f"else {text[id(a[3])]})"), 4
    return f"{op}({text[id(a[0])]})", 4


def _product_text(node, text, prec):
    return "*".join(_wrap(x, text, prec, 3) for x in node.args)


# ---------------------------------------------------------------------------
# arrays


class SymArray:
    """Vector or matrix of scalar expressions with strict shape conformance."""

    __slots__ = ("data",)
    __array_priority__ = 200.0

    def __init__(self, data):
        src = data if isinstance(data, np.ndarray) else np.array(data, dtype=object)
        arr = np.empty(src.shape, dtype=object)
        for idx in np.ndindex(src.shape):
            arr[idx] = as_expr(src[idx])
        if arr.ndim not in (1, 2, 4):
            raise ShapeError(f"unsupported array rank {arr.ndim}")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, idx):
        out = self.data[idx]
        if isinstance(out, np.ndarray):
            return SymArray(out)
        return out

    @property
    def T(self):
        if self.ndim != 2:
            raise ShapeError("transpose needs a matrix")
        return SymArray(self.data.T)

    def _binary(self, other, fn, name):
        if isinstance(other, SymArray):
            if other.shape != self.shape:
                raise ShapeError(f"{name}: shapes {self.shape} and {other.shape} differ")
            return SymArray(fn(self.data, other.data))
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return SymArray(_objmap(lambda x: fn(x, other), self.data))

    def __add__(self, other):
        return self._binary(other, lambda x, y: x + y, "add")

    def __radd__(self, other):
        return self._binary(other, lambda x, y: y + x, "add")

    def __sub__(self, other):
        return self._binary(other, lambda x, y: x - y, "subtract")

    def __rsub__(self, other):
        return self._binary(other, lambda x, y: y - x, "subtract")

    def __mul__(self, other):
        if isinstance(other, SymArray):
            raise ShapeError("use @ or dot() for array products")
        return self._binary(other, lambda x, y: x * y, "multiply")

    def __rmul__(self, other):
        if isinstance(other, SymArray):
            raise ShapeError("use @ or dot() for array products")
        return self._binary(other, lambda x, y: y * x, "multiply")

    def __truediv__(self, other):
        if isinstance(other, SymArray):
            raise ShapeError("cannot divide by an array")
        return self._binary(other, lambda x, y: x / y, "divide")

    def __neg__(self):
        return SymArray(_objmap(lambda x: -x, self.data))

    def __matmul__(self, other):
        if not isinstance(other, SymArray):
            return NotImplemented
        return dot(self, other)

    def jacobian(self, u):
        return jacobian(self, u)

    def __repr__(self):
        return f"SymArray({pretty(self)})"

    def __eq__(self, other):
        if not isinstance(other, SymArray) or other.shape != self.shape:
            return False
        return all(x is y for x, y in zip(self.data.flat, other.data.flat))

    __hash__ = None


def _objmap(fn, arr):
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = fn(arr[idx])
    return out


def as_vector(items) -> SymArray:
    if isinstance(items, SymArray):
        if items.ndim != 1:
            raise ShapeError("expected a vector")
        return items
    arr = np.empty(len(items), dtype=object)
    for i, x in enumerate(items):
        arr[i] = as_expr(x)
    return SymArray(arr)


def as_matrix(rows) -> SymArray:
    if isinstance(rows, SymArray):
        if rows.ndim != 2:
            raise ShapeError("expected a matrix")
        return rows
    rows = [list(r) for r in rows]
    ncols = {len(r) for r in rows}
    if len(ncols) != 1:
        raise ShapeError("ragged matrix rows")
    arr = np.empty((len(rows), ncols.pop()), dtype=object)
    for i, r in enumerate(rows):
        for j, x in enumerate(r):
            arr[i, j] = as_expr(x)
    return SymArray(arr)


def identity(d: int) -> SymArray:
    return as_matrix([[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)])


def _sum_products(pairs):
    return add(*[mul(x, y) for x, y in pairs])


def dot(a, b):
    """Contract the last axis of ``a`` with the first axis of ``b``."""
    if not isinstance(a, SymArray) or not isinstance(b, SymArray):
        raise ShapeError("dot needs two arrays")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} do not conform")
    if a.ndim == 1 and b.ndim == 1:
        return _sum_products(zip(a.data, b.data))
    if a.ndim == 2 and b.ndim == 1:
        return as_vector([_sum_products(zip(row, b.data)) for row in a.data])
    if a.ndim == 1 and b.ndim == 2:
        return as_vector([_sum_products(zip(a.data, col)) for col in b.data.T])
    if a.ndim == 2 and b.ndim == 2:
        return as_matrix([[_sum_products(zip(row, col)) for col in b.data.T]
                          for row in a.data])
    raise ShapeError(f"dot: unsupported ranks {a.ndim}, {b.ndim}")


def inner(a, b) -> Expr:
    """Full contraction of two equally shaped arrays (or product of scalars)."""
    if isinstance(a, SymArray) or isinstance(b, SymArray):
        if not (isinstance(a, SymArray) and isinstance(b, SymArray)):
            raise ShapeError("inner: cannot mix scalar and array")
        if a.shape != b.shape:
            raise ShapeError(f"inner: shapes {a.shape} and {b.shape} differ")
        return _sum_products(zip(a.data.flat, b.data.flat))
    return mul(a, b)


def outer(a, b) -> SymArray:
    a, b = as_vector(a), as_vector(b)
    return as_matrix([[mul(x, y) for y in b.data] for x in a.data])


def tr(a) -> Expr:
    if not isinstance(a, SymArray) or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("trace needs a square matrix")
    return add(*[a.data[i, i] for i in range(a.shape[0])])


def elementwise(fn: Callable, a):
    if isinstance(a, SymArray):
        return SymArray(_objmap(fn, a.data))
    return fn(as_expr(a))
