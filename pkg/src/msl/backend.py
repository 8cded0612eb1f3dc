"""Execution engines for compiled expression programs.

Everything hot in this package (grid jet norms, uniqueness scans, sphere
minima, 1-d locus sweeps) reduces to one kernel: evaluate a batch of flat
expression programs over a batch of points.  Two interchangeable engines are
provided:

* ``numba`` -- a parallel @njit stack interpreter (default when numba imports),
* ``numpy`` -- a chunked vectorized interpreter with identical semantics.

Select the default with ``MSL_BACKEND=numba|numpy`` (anything else or unset
means auto).  ``MSL_THREADS`` caps numba's thread count.  Integer powers are
expanded as repeated multiplication in both engines so results agree closely;
division by an exact zero is reported as a domain error rather than silently
producing NaN.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Program",
    "compile_programs",
    "run_program",
    "active_engine",
    "HAVE_NUMBA",
    "BackendDomainError",
]

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_EXP = 7
OP_SIN = 8
OP_COS = 9
OP_POWI = 10

_BLOCK = 512  # points per thread block in the numba engine
_CHUNK = 16384  # points per buffer in the numpy engine


class BackendDomainError(ArithmeticError):
    """A program divided by an exact zero at some evaluated point."""

    def __init__(self, point):
        super().__init__(f"zero denominator at point {point}")
        self.point = point


_requested = os.environ.get("MSL_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"MSL_BACKEND must be auto|numba|numpy, got {_requested!r}")

HAVE_NUMBA = False
if _requested in ("auto", "numba"):
    try:
        import numba
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:
        if _requested == "numba":
            raise RuntimeError("MSL_BACKEND=numba but numba is not importable")

if HAVE_NUMBA and os.environ.get("MSL_THREADS"):
    numba.set_num_threads(max(1, int(os.environ["MSL_THREADS"])))

_DEFAULT_ENGINE = "numba" if (HAVE_NUMBA and _requested != "numpy") else "numpy"


def active_engine():
    return _DEFAULT_ENGINE


@dataclass(frozen=True)
class Program:
    """A flat SSA program: instruction i writes slot i; the outputs are slots."""

    code: np.ndarray  # (n_instr, 3) int64: op, a, b
    consts: np.ndarray  # float64 constant pool
    out_slots: np.ndarray  # int64 output slot per root
    arity: int

    @property
    def n_outputs(self):
        return len(self.out_slots)


def compile_programs(roots, arity):
    """Compile several ASTs into one program with shared subexpressions."""
    from . import expr as _e

    code = []
    consts = []
    const_index = {}
    memo = {}

    def emit(op, a, b):
        code.append((op, a, b))
        return len(code) - 1

    def const_slot(value):
        key = float(value)
        idx = const_index.get(key)
        if idx is None:
            idx = len(consts)
            consts.append(key)
            const_index[key] = idx
        return idx

    def walk(node):
        slot = memo.get(node)
        if slot is not None:
            return slot
        if isinstance(node, _e.Const):
            slot = emit(OP_CONST, const_slot(node.value), 0)
        elif isinstance(node, _e.Var):
            slot = emit(OP_VAR, node.index, 0)
        elif isinstance(node, _e.Add):
            slot = emit(OP_ADD, walk(node.a), walk(node.b))
        elif isinstance(node, _e.Sub):
            slot = emit(OP_SUB, walk(node.a), walk(node.b))
        elif isinstance(node, _e.Mul):
            slot = emit(OP_MUL, walk(node.a), walk(node.b))
        elif isinstance(node, _e.Div):
            slot = emit(OP_DIV, walk(node.a), walk(node.b))
        elif isinstance(node, _e.Neg):
            slot = emit(OP_NEG, walk(node.a), 0)
        elif isinstance(node, _e.Exp):
            slot = emit(OP_EXP, walk(node.a), 0)
        elif isinstance(node, _e.Sin):
            slot = emit(OP_SIN, walk(node.a), 0)
        elif isinstance(node, _e.Cos):
            slot = emit(OP_COS, walk(node.a), 0)
        elif isinstance(node, _e.Pow):
            slot = emit(OP_POWI, walk(node.base), node.exponent)
        else:
            raise TypeError(f"cannot compile node {node!r}")
        memo[node] = slot
        return slot

    out_slots = np.array([walk(r) for r in roots], dtype=np.int64)
    return Program(
        code=np.array(code, dtype=np.int64).reshape(-1, 3),
        consts=np.array(consts, dtype=np.float64),
        out_slots=out_slots,
        arity=arity,
    )


# --------------------------------------------------------------------------
# numba engine


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _run_numba(code, consts, out_slots, points, out, err):  # pragma: no cover
        # instructions outer, points inner: one branch per instruction and
        # SIMD-friendly contiguous inner loops over a cache-resident block
        npts = points.shape[0]
        nin = code.shape[0]
        nblocks = (npts + _BLOCK - 1) // _BLOCK
        for blk in prange(nblocks):
            start = blk * _BLOCK
            stop = min(start + _BLOCK, npts)
            m = stop - start
            buf = np.empty((nin, _BLOCK))
            for ii in range(nin):
                op = code[ii, 0]
                a = code[ii, 1]
                b = code[ii, 2]
                if op == 0:
                    v = consts[a]
                    for p in range(m):
                        buf[ii, p] = v
                elif op == 1:
                    for p in range(m):
                        buf[ii, p] = points[start + p, a]
                elif op == 2:
                    for p in range(m):
                        buf[ii, p] = buf[a, p] + buf[b, p]
                elif op == 3:
                    for p in range(m):
                        buf[ii, p] = buf[a, p] - buf[b, p]
                elif op == 4:
                    for p in range(m):
                        buf[ii, p] = buf[a, p] * buf[b, p]
                elif op == 5:
                    for p in range(m):
                        den = buf[b, p]
                        if den == 0.0:
                            err[start + p] = 1
                            buf[ii, p] = np.nan
                        else:
                            buf[ii, p] = buf[a, p] / den
                elif op == 6:
                    for p in range(m):
                        buf[ii, p] = -buf[a, p]
                elif op == 7:
                    for p in range(m):
                        buf[ii, p] = np.exp(buf[a, p])
                elif op == 8:
                    for p in range(m):
                        buf[ii, p] = np.sin(buf[a, p])
                elif op == 9:
                    for p in range(m):
                        buf[ii, p] = np.cos(buf[a, p])
                else:
                    for p in range(m):
                        base = buf[a, p]
                        v = 1.0
                        for _ in range(b):
                            v *= base
                        buf[ii, p] = v
            for oo in range(out_slots.shape[0]):
                s = out_slots[oo]
                for p in range(m):
                    out[oo, start + p] = buf[s, p]


# --------------------------------------------------------------------------
# numpy engine


def _run_numpy(code, consts, out_slots, points, out, err):
    npts = points.shape[0]
    nin = code.shape[0]
    with np.errstate(all="ignore"):
        for start in range(0, npts, _CHUNK):
            stop = min(start + _CHUNK, npts)
            m = stop - start
            buf = np.empty((nin, m))
            for ii in range(nin):
                op, a, b = code[ii]
                if op == OP_CONST:
                    buf[ii] = consts[a]
                elif op == OP_VAR:
                    buf[ii] = points[start:stop, a]
                elif op == OP_ADD:
                    np.add(buf[a], buf[b], out=buf[ii])
                elif op == OP_SUB:
                    np.subtract(buf[a], buf[b], out=buf[ii])
                elif op == OP_MUL:
                    np.multiply(buf[a], buf[b], out=buf[ii])
                elif op == OP_DIV:
                    zero = buf[b] == 0.0
                    if zero.any():
                        err[start:stop][zero] = 1
                    np.divide(buf[a], buf[b], out=buf[ii])
                elif op == OP_NEG:
                    np.negative(buf[a], out=buf[ii])
                elif op == OP_EXP:
                    np.exp(buf[a], out=buf[ii])
                elif op == OP_SIN:
                    np.sin(buf[a], out=buf[ii])
                elif op == OP_COS:
                    np.cos(buf[a], out=buf[ii])
                else:  # OP_POWI, repeated multiply to mirror the numba engine
                    acc = np.ones(m)
                    for _ in range(b):
                        acc *= buf[a]
                    buf[ii] = acc
            out[:, start:stop] = buf[out_slots]


def run_program(program, points, engine=None):
    """Evaluate ``program`` at the (m, n) point batch; returns (n_out, m)."""
    engine = engine or _DEFAULT_ENGINE
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != program.arity:
        raise ValueError(f"expected points of shape (m, {program.arity})")
    npts = pts.shape[0]
    out = np.empty((program.n_outputs, npts))
    err = np.zeros(npts, dtype=np.uint8)
    if engine == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba engine requested but numba is unavailable")
        _run_numba(program.code, program.consts, program.out_slots, pts, out, err)
    elif engine == "numpy":
        _run_numpy(program.code, program.consts, program.out_slots, pts, out, err)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if err.any():
        raise BackendDomainError(pts[int(np.argmax(err))])
    return out
