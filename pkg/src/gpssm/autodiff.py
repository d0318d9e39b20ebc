"""Reverse-mode automatic differentiation on a replayable operation tape.

Dense float64 arrays only. A :class:`Tape` records every primitive applied
to its variables together with the computed values, so the whole graph can
be re-evaluated on fresh leaf values (``evaluate``), differentiated
(``gradient``), or checked against central finite differences
(``fd_check``).

Supported primitives: elementwise add/sub/mul/div/neg, exp, log, sqrt,
square, clip-from-below, matrix multiply (2-d or stacked 3-d operands),
sum reductions, reshape, matrix transpose, slicing, concatenation,
Cholesky factorization, triangular solves and diagonal extract/embed.
Elementwise binaries broadcast only when shapes are equal, one operand is
a scalar, or both operands have equal rank with axes matching or 1 (the
gradient then sums over the broadcast axes, which keeps replay semantics
unambiguous). Matrix products require operands of rank 2 or 3; vectors
must be reshaped to column/row matrices by the caller.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "AutodiffError",
    "Tape",
    "Var",
    "evaluate",
    "gradient",
    "fd_check",
    "cholesky_solve",
    "chol_jittered",
    "exp",
    "log",
    "sqrt",
    "square",
    "clip_min",
    "concat",
    "cholesky",
    "tri_solve",
    "diag_part",
    "diag_embed",
    "expand_batch",
    "mT",
    "asum",
]

JITTER_START = 1e-6
JITTER_MAX = 1e-2


class AutodiffError(RuntimeError):
    """Raised on malformed tapes, shape mismatches or numeric failures."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _is_scalar_shape(shape) -> bool:
    return all(s == 1 for s in shape)


def _ew_shape(sa, sb):
    """Result shape of an elementwise binary under the restricted rules."""
    if sa == sb:
        return sa
    if _is_scalar_shape(sa):
        return sb
    if _is_scalar_shape(sb):
        return sa
    if len(sa) == len(sb) and all(p == q or p == 1 or q == 1 for p, q in zip(sa, sb)):
        return tuple(max(p, q) for p, q in zip(sa, sb))
    raise AutodiffError(f"elementwise shapes {sa} and {sb} do not broadcast")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _np_mT(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _np_diag_part(x: np.ndarray) -> np.ndarray:
    return np.diagonal(x, axis1=-2, axis2=-1).copy()


def _np_diag_embed(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    out = np.zeros(x.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = x
    return out


def _np_tri_solve(a: np.ndarray, b: np.ndarray, lower: bool, trans: bool) -> np.ndarray:
    tr = "T" if trans else "N"
    if a.ndim == 2:
        return solve_triangular(a, b, lower=lower, trans=tr)
    out = np.empty_like(b)
    for i in range(a.shape[0]):
        out[i] = solve_triangular(a[i], b[i], lower=lower, trans=tr)
    return out


def _matmul_shape(sa, sb):
    if len(sa) < 2 or len(sb) < 2 or len(sa) > 3 or len(sb) > 3:
        raise AutodiffError(f"matmul needs rank-2/3 operands, got {sa} @ {sb}")
    if sa[-1] != sb[-2]:
        raise AutodiffError(f"matmul inner dims differ: {sa} @ {sb}")
    if len(sa) == 3 and len(sb) == 3 and sa[0] != sb[0]:
        raise AutodiffError(f"matmul batch dims differ: {sa} @ {sb}")
    batch = ()
    if len(sa) == 3:
        batch = (sa[0],)
    elif len(sb) == 3:
        batch = (sb[0],)
    return batch + (sa[-2], sb[-1])


# --- primitive table -------------------------------------------------------
#
# forward: (parent_values, aux) -> value
# vjp:     (g, value, parent_values, aux) -> list of parent gradients
#          (None marks a non-differentiable parent slot)

def _vjp_matmul(g, out, vals, aux):
    a, b = vals
    ga = _unbroadcast(g @ _np_mT(b), a.shape)
    gb = _unbroadcast(_np_mT(a) @ g, b.shape)
    return [ga, gb]


def _vjp_sum(g, out, vals, aux):
    (x,) = vals
    axis, keepdims = aux
    if axis is None:
        return [np.broadcast_to(g, x.shape).copy()]
    if not keepdims:
        g = np.expand_dims(g, axis)
    return [np.broadcast_to(g, x.shape).copy()]


def _vjp_slice(g, out, vals, aux):
    (x,) = vals
    gx = np.zeros_like(x)
    gx[aux] += g
    return [gx]


def _vjp_concat(g, out, vals, aux):
    axis = aux
    grads = []
    start = 0
    for v in vals:
        n = v.shape[axis]
        key = [slice(None)] * g.ndim
        key[axis] = slice(start, start + n)
        grads.append(g[tuple(key)].copy())
        start += n
    return grads


def _phi(x: np.ndarray) -> np.ndarray:
    """Lower-triangular projection with halved diagonal."""
    return np.tril(x) - 0.5 * _np_diag_embed(_np_diag_part(x))


def _vjp_cholesky(g, out, vals, aux):
    # Standard reverse-mode rule for A = L L^T with L = chol(A); the result
    # is symmetrized so it is exact for symmetric perturbations of A.
    L = out
    P = _phi(_np_mT(L) @ g)
    tmp = _np_tri_solve(L, _np_mT(P), lower=True, trans=True)
    S = _np_tri_solve(L, _np_mT(tmp), lower=True, trans=True)
    return [(S + _np_mT(S)) / 2.0]


def _vjp_tri_solve(g, out, vals, aux):
    a, b = vals
    lower, trans = aux
    gb = _np_tri_solve(a, g, lower=lower, trans=not trans)
    if trans:
        ga = -out @ _np_mT(gb)
    else:
        ga = -gb @ _np_mT(out)
    ga = np.tril(ga) if lower else np.triu(ga)
    return [ga, gb]


_OPS = {
    "leaf": (None, None),
    "const": (None, None),
    "add": (
        lambda v, aux: v[0] + v[1],
        lambda g, o, v, aux: [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)],
    ),
    "sub": (
        lambda v, aux: v[0] - v[1],
        lambda g, o, v, aux: [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)],
    ),
    "mul": (
        lambda v, aux: v[0] * v[1],
        lambda g, o, v, aux: [
            _unbroadcast(g * v[1], v[0].shape),
            _unbroadcast(g * v[0], v[1].shape),
        ],
    ),
    "div": (
        lambda v, aux: v[0] / v[1],
        lambda g, o, v, aux: [
            _unbroadcast(g / v[1], v[0].shape),
            _unbroadcast(-g * v[0] / (v[1] * v[1]), v[1].shape),
        ],
    ),
    "neg": (lambda v, aux: -v[0], lambda g, o, v, aux: [-g]),
    "exp": (lambda v, aux: np.exp(v[0]), lambda g, o, v, aux: [g * o]),
    "log": (lambda v, aux: np.log(v[0]), lambda g, o, v, aux: [g / v[0]]),
    "sqrt": (lambda v, aux: np.sqrt(v[0]), lambda g, o, v, aux: [g * 0.5 / o]),
    "square": (lambda v, aux: v[0] * v[0], lambda g, o, v, aux: [g * 2.0 * v[0]]),
    "clip_min": (
        lambda v, aux: np.maximum(v[0], aux),
        lambda g, o, v, aux: [g * (v[0] > aux)],
    ),
    "matmul": (lambda v, aux: v[0] @ v[1], _vjp_matmul),
    "sum": (lambda v, aux: v[0].sum(axis=aux[0], keepdims=aux[1]), _vjp_sum),
    "reshape": (
        lambda v, aux: v[0].reshape(aux),
        lambda g, o, v, aux: [g.reshape(v[0].shape)],
    ),
    "mT": (lambda v, aux: _np_mT(v[0]), lambda g, o, v, aux: [_np_mT(g)]),
    "slice": (lambda v, aux: v[0][aux].copy(), _vjp_slice),
    "concat": (lambda v, aux: np.concatenate(v, axis=aux), _vjp_concat),
    "cholesky": (lambda v, aux: np.linalg.cholesky(v[0]), _vjp_cholesky),
    "tri_solve": (lambda v, aux: _np_tri_solve(v[0], v[1], *aux), _vjp_tri_solve),
    "diag_part": (
        lambda v, aux: _np_diag_part(v[0]),
        lambda g, o, v, aux: [_np_diag_embed(g)],
    ),
    "diag_embed": (
        lambda v, aux: _np_diag_embed(v[0]),
        lambda g, o, v, aux: [_np_diag_part(g)],
    ),
    "expand_batch": (
        lambda v, aux: np.broadcast_to(v[0], (aux,) + v[0].shape).copy(),
        lambda g, o, v, aux: [g.sum(axis=0)],
    ),
}


class _Node:
    __slots__ = ("op", "parents", "aux", "value", "needs_grad")

    def __init__(self, op, parents, aux, value, needs_grad):
        self.op = op
        self.parents = parents
        self.aux = aux
        self.value = value
        self.needs_grad = needs_grad


class Tape:
    """Ordered record of primitive operations with their intermediate values.

    Built eagerly: applying operators to :class:`Var` handles records a node
    and computes its value immediately. Leaves are named and can be rebound
    to new values when the tape is replayed. Tapes are immutable once built
    in the sense that recorded nodes are never modified; replay never
    touches the recorded values.
    """

    def __init__(self, checked: bool = False):
        self.checked = checked
        self._nodes: list[_Node] = []
        self._leaves: dict[str, int] = {}
        self._output: int | None = None

    # -- construction -------------------------------------------------------

    def leaf(self, name: str, value) -> "Var":
        """Register a named differentiable input holding ``value``."""
        if name in self._leaves:
            raise AutodiffError(f"duplicate leaf name {name!r}")
        arr = _as_array(value).copy()
        if self.checked and not np.all(np.isfinite(arr)):
            raise AutodiffError(f"non-finite values in leaf {name!r}")
        idx = self._append(_Node("leaf", (), name, arr, True))
        self._leaves[name] = idx
        return Var(self, idx)

    def constant(self, value) -> "Var":
        """Record a fixed, non-differentiable array."""
        arr = _as_array(value).copy()
        if self.checked and not np.all(np.isfinite(arr)):
            raise AutodiffError("non-finite values in constant")
        return Var(self, self._append(_Node("const", (), None, arr, False)))

    def lift(self, value) -> "Var":
        """Return ``value`` unchanged if it is a Var of this tape, else wrap it."""
        if isinstance(value, Var):
            if value.tape is not self:
                raise AutodiffError("cannot mix variables from different tapes")
            return value
        return self.constant(value)

    def mark_output(self, var: "Var") -> None:
        if var.tape is not self:
            raise AutodiffError("output variable belongs to a different tape")
        self._output = var._idx

    # -- internals ----------------------------------------------------------

    def _append(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _record(self, op: str, parents: tuple["Var", ...], aux) -> "Var":
        fwd = _OPS[op][0]
        vals = tuple(self._nodes[p._idx].value for p in parents)
        value = fwd(vals, aux)
        if self.checked and not np.all(np.isfinite(value)):
            raise AutodiffError(f"non-finite result in op {op!r}")
        needs = any(self._nodes[p._idx].needs_grad for p in parents)
        idx = self._append(_Node(op, tuple(p._idx for p in parents), aux, value, needs))
        return Var(self, idx)

    def _leaf_values(self, leaves) -> list[np.ndarray]:
        """Recorded values with ``leaves`` overrides applied; shape-checked."""
        leaves = leaves or {}
        unknown = set(leaves) - set(self._leaves)
        if unknown:
            raise AutodiffError(f"unknown leaf names: {sorted(unknown)}")
        out = []
        for name, idx in self._leaves.items():
            if name in leaves:
                arr = _as_array(leaves[name])
                rec = self._nodes[idx].value
                if arr.shape != rec.shape:
                    raise AutodiffError(
                        f"leaf {name!r} expects shape {rec.shape}, got {arr.shape}"
                    )
                out.append(arr)
            else:
                out.append(self._nodes[idx].value)
        return out

    def _replay(self, leaves) -> list[np.ndarray]:
        """Recompute every node value with leaf overrides; recorded values untouched."""
        overrides = dict(zip(self._leaves, self._leaf_values(leaves)))
        values: list[np.ndarray] = [None] * len(self._nodes)
        for i, node in enumerate(self._nodes):
            if node.op == "leaf":
                values[i] = overrides[node.aux]
            elif node.op == "const":
                values[i] = node.value
            else:
                fwd = _OPS[node.op][0]
                values[i] = fwd(tuple(values[p] for p in node.parents), node.aux)
                if self.checked and not np.all(np.isfinite(values[i])):
                    raise AutodiffError(f"non-finite result in op {node.op!r}")
        return values

    def _output_idx(self) -> int:
        if self._output is not None:
            return self._output
        if not self._nodes:
            raise AutodiffError("empty tape")
        return len(self._nodes) - 1

    @property
    def leaf_names(self) -> tuple[str, ...]:
        return tuple(self._leaves)


class Var:
    """Handle to one tape node; supports numpy-style operator overloading."""

    __slots__ = ("tape", "_idx")
    __array_ufunc__ = None          # keep numpy from absorbing us in mixed ops
    __array_priority__ = 1000.0

    def __init__(self, tape: Tape, idx: int):
        self.tape = tape
        self._idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape._nodes[self._idx].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.tape._nodes[self._idx].op!r}, shape={self.shape})"

    # -- arithmetic ----------------------------------------------------------

    def _binary(self, op, other, swap=False):
        other = self.tape.lift(other)
        a, b = (other, self) if swap else (self, other)
        _ew_shape(a.shape, b.shape)
        return self.tape._record(op, (a, b), None)

    def __add__(self, other):
        return self._binary("add", other)

    def __radd__(self, other):
        return self._binary("add", other, swap=True)

    def __sub__(self, other):
        return self._binary("sub", other)

    def __rsub__(self, other):
        return self._binary("sub", other, swap=True)

    def __mul__(self, other):
        return self._binary("mul", other)

    def __rmul__(self, other):
        return self._binary("mul", other, swap=True)

    def __truediv__(self, other):
        return self._binary("div", other)

    def __rtruediv__(self, other):
        return self._binary("div", other, swap=True)

    def __neg__(self):
        return self.tape._record("neg", (self,), None)

    def __pow__(self, p):
        if p == 2:
            return self.tape._record("square", (self,), None)
        raise AutodiffError("only squaring is supported; use exp(p*log(x)) otherwise")

    def __matmul__(self, other):
        other = self.tape.lift(other)
        _matmul_shape(self.shape, other.shape)
        return self.tape._record("matmul", (self, other), None)

    def __rmatmul__(self, other):
        other = self.tape.lift(other)
        _matmul_shape(other.shape, self.shape)
        return self.tape._record("matmul", (other, self), None)

    def __getitem__(self, key):
        return self.tape._record("slice", (self,), key)

    # -- shape ops -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return self.tape._record("sum", (self,), (axis, keepdims))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        new = tuple(int(s) for s in shape)
        if -1 in new:
            raise AutodiffError("reshape with -1 is not supported")
        if int(np.prod(new)) != self.value.size:
            raise AutodiffError(f"cannot reshape {self.shape} to {new}")
        return self.tape._record("reshape", (self,), new)

    @property
    def T(self):
        """Matrix transpose (swaps the last two axes)."""
        if self.ndim < 2:
            return self
        return self.tape._record("mT", (self,), None)


# --- generic math helpers (Var or ndarray) ---------------------------------

def _is_var(x) -> bool:
    return isinstance(x, Var)


def exp(x):
    return x.tape._record("exp", (x,), None) if _is_var(x) else np.exp(x)


def log(x):
    return x.tape._record("log", (x,), None) if _is_var(x) else np.log(x)


def sqrt(x):
    return x.tape._record("sqrt", (x,), None) if _is_var(x) else np.sqrt(x)


def square(x):
    return x.tape._record("square", (x,), None) if _is_var(x) else np.square(x)


def clip_min(x, floor: float):
    """Elementwise max(x, floor) with pass-through gradient where x > floor."""
    if _is_var(x):
        return x.tape._record("clip_min", (x,), float(floor))
    return np.maximum(x, floor)


def asum(x, axis=None, keepdims=False):
    return x.sum(axis=axis, keepdims=keepdims)


def mT(x):
    """Matrix transpose for rank >= 2 (swaps the last two axes)."""
    if _is_var(x):
        return x.T
    return np.swapaxes(x, -1, -2) if np.ndim(x) >= 2 else x


def concat(parts, axis=0):
    parts = list(parts)
    tape = next((p.tape for p in parts if _is_var(p)), None)
    if tape is None:
        return np.concatenate(parts, axis=axis)
    lifted = tuple(tape.lift(p) for p in parts)
    return tape._record("concat", lifted, axis)


def cholesky(a):
    if _is_var(a):
        return a.tape._record("cholesky", (a,), None)
    return np.linalg.cholesky(a)


def tri_solve(a, b, lower=True, trans=False):
    """Solve ``a x = b`` (or ``a^T x = b`` when trans) for triangular ``a``."""
    if _is_var(a) or _is_var(b):
        tape = a.tape if _is_var(a) else b.tape
        return tape._record("tri_solve", (tape.lift(a), tape.lift(b)), (lower, trans))
    return _np_tri_solve(a, b, lower, trans)


def diag_part(a):
    if _is_var(a):
        return a.tape._record("diag_part", (a,), None)
    return _np_diag_part(a)


def diag_embed(v):
    if _is_var(v):
        return v.tape._record("diag_embed", (v,), None)
    return _np_diag_embed(v)


def expand_batch(x, k: int):
    """Stack ``k`` copies of ``x`` along a new leading axis."""
    if _is_var(x):
        return x.tape._record("expand_batch", (x,), int(k))
    return np.broadcast_to(x, (int(k),) + np.shape(x)).copy()


def _value_of(x) -> np.ndarray:
    return x.value if _is_var(x) else _as_array(x)


def chol_jittered(a, min_rel: float = 0.0):
    """Cholesky of a symmetric PSD matrix with scaled-identity jitter on demand.

    Tries ``min_rel * mean(diag)`` of jitter first (default none), then
    escalates through ``1e-6 * mean(diag)`` tenfold up to ``1e-2`` until the
    factorization succeeds. The jitter level is chosen from the current
    numeric values and recorded as a constant, so replays of the tape reuse
    the identical operation sequence. Callers that want jitter
    unconditionally (e.g. kernel matrices) pass ``min_rel=1e-6``.
    """
    aval = _value_of(a)
    n = aval.shape[-1]
    scale = float(np.mean(_np_diag_part(aval)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eye = np.eye(n) if aval.ndim == 2 else np.broadcast_to(np.eye(n), aval.shape).copy()
    rel = float(min_rel)
    while True:
        try:
            np.linalg.cholesky(aval + rel * scale * eye)
            break
        except np.linalg.LinAlgError:
            rel = JITTER_START if rel < JITTER_START else rel * 10.0
            if rel > JITTER_MAX:
                raise AutodiffError(
                    f"matrix not positive definite after jitter escalation to {JITTER_MAX:g}"
                )
    if rel == 0.0:
        return cholesky(a)
    return cholesky(a + (rel * scale) * eye)


def cholesky_solve(a, b):
    """Solve ``a x = b`` for symmetric positive definite ``a`` by factorization.

    Never forms the explicit inverse: factorizes ``a`` (with the standard
    jitter policy) and applies two triangular solves. ``b`` may be a vector
    or a matrix of right-hand sides.
    """
    vec = np.ndim(_value_of(b)) == 1
    if vec:
        b = b.reshape(int(_value_of(b).shape[0]), 1)
    L = chol_jittered(a)
    x = tri_solve(L, tri_solve(L, b, lower=True, trans=False), lower=True, trans=True)
    if vec:
        n = _value_of(x).shape[0]
        x = x.reshape(n)
    return x


# --- tape-level entry points ------------------------------------------------

def evaluate(tape: Tape, leaves=None) -> np.ndarray:
    """Replay the tape with optional leaf overrides; return the output value.

    Deterministic: identical leaves produce identical outputs. With no
    overrides the recorded output value is returned directly.
    """
    if not leaves:
        return tape._nodes[tape._output_idx()].value
    values = tape._replay(leaves)
    return values[tape._output_idx()]


def gradient(tape: Tape, leaves=None, wrt=None) -> dict[str, np.ndarray]:
    """Reverse-mode derivatives of the scalar output w.r.t. requested leaves.

    ``wrt`` is an iterable of leaf names (default: all leaves). Every
    requested leaf gets an entry of its own shape; leaves the output does
    not depend on get zeros.
    """
    out_idx = tape._output_idx()
    if leaves:
        values = tape._replay(leaves)
    else:
        values = [n.value for n in tape._nodes]
    out_val = values[out_idx]
    if out_val.size != 1:
        raise AutodiffError(f"gradient needs a scalar output, got shape {out_val.shape}")

    wrt = set(wrt) if wrt is not None else set(tape._leaves)
    unknown = wrt - set(tape._leaves)
    if unknown:
        raise AutodiffError(f"unknown leaves in wrt: {sorted(unknown)}")

    grads: list[np.ndarray | None] = [None] * len(tape._nodes)
    grads[out_idx] = np.ones_like(out_val)
    for i in range(out_idx, -1, -1):
        node = tape._nodes[i]
        g = grads[i]
        grads[i] = None
        if g is None or not node.needs_grad or node.op in ("leaf", "const"):
            if node.op == "leaf" and g is not None:
                grads[i] = g      # keep leaf grads for collection below
            continue
        vjp = _OPS[node.op][1]
        pvals = tuple(values[p] for p in node.parents)
        pgrads = vjp(g, values[i], pvals, node.aux)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not tape._nodes[p].needs_grad:
                continue
            if grads[p] is None:
                grads[p] = pg
            else:
                grads[p] = grads[p] + pg

    result = {}
    for name in tape._leaves:
        if name not in wrt:
            continue
        idx = tape._leaves[name]
        g = grads[idx]
        result[name] = g if g is not None else np.zeros_like(values[idx])
    return result


def fd_check(tape: Tape, leaves=None, eps: float = 1e-5, wrt=None) -> float:
    """Max relative disagreement between reverse-mode and central finite diffs.

    Returns ``max |AD - FD| / (|FD| + 1e-8)`` over every entry of every
    requested leaf, with FD computed at step ``eps``.
    """
    ad = gradient(tape, leaves, wrt)
    base = dict(zip(tape.leaf_names, tape._leaf_values(leaves)))
    worst = 0.0
    for name in ad:
        x0 = base[name].copy()
        g = ad[name]
        flat = x0.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = float(evaluate(tape, {**base, name: x0}))
            flat[j] = orig - eps
            f_minus = float(evaluate(tape, {**base, name: x0}))
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(g.reshape(-1)[j] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, err)
    return worst
