"""Dense float64 matrix primitives with a reverse-mode gradient tape.

The op set is deliberately small and hand-verifiable: every primitive
carries its own backward rule, and ``grad_check`` validates any scalar
computation against central finite differences. Matrices are plain numpy
``float64`` arrays with two dimensions; vectors enter the eager helpers
(`l2_distance`, `cosine`, `masked_softmax`) as 1-D arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class UndefinedCosineError(ValueError):
    """Cosine similarity requested for a zero-norm vector."""


def _as_matrix(a: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Shared kernels (used by both the eager API and the tape ops)


def leaky_relu_values(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    return np.maximum(x, slope * x)


def _masked_softmax_kernel(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if scores.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} != scores shape {scores.shape}")
    if not mask.any(axis=-1).all():
        raise ValueError("masked softmax requires at least one unmasked entry per row")
    shifted = np.where(mask, scores, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Exp-normalize ``scores`` over unmasked entries; masked entries are 0."""
    return _masked_softmax_kernel(
        np.asarray(scores, dtype=np.float64), np.asarray(mask, dtype=bool)
    )


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCosineError("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Tape


@dataclass
class Parameter:
    """A trainable matrix together with its accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = _as_matrix(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]


class Node:
    """One recorded primitive application: output value plus backward rule."""

    __slots__ = ("value", "parents", "backward_fn", "param", "index", "needs_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Node", ...],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None,
        param: Parameter | None = None,
    ) -> None:
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param
        self.index = -1
        self.needs_grad = param is not None or any(p.needs_grad for p in parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]


class Tape:
    """Records primitives in application order; replays them in reverse.

    One tape is confined to one training step on one thread. ``backward``
    zeroes the gradients of every parameter bound to the tape before
    accumulating chain-rule contributions.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._params: list[Parameter] = []

    # -- leaves -------------------------------------------------------------

    def _record(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def const(self, value: np.ndarray) -> Node:
        return self._record(Node(_as_matrix(value), (), None))

    def param(self, p: Parameter) -> Node:
        self._params.append(p)
        return self._record(Node(p.value, (), None, param=p))

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
        av, bv = a.value, b.value
        need_a, need_b = a.needs_grad, b.needs_grad

        def backward(g: np.ndarray):
            return (g @ bv.T if need_a else None), (av.T @ g if need_b else None)

        return self._record(Node(av @ bv, (a, b), backward))

    def add(self, a: Node, b: Node) -> Node:
        # Row broadcast (n,k)+(1,k) supported for bias terms.
        if a.shape != b.shape and not (b.shape == (1, a.shape[1])):
            raise ShapeError(f"add shapes {a.shape} + {b.shape}")
        broadcast = a.shape != b.shape

        def backward(g: np.ndarray):
            gb = g.sum(axis=0, keepdims=True) if broadcast else g
            return g, gb

        return self._record(Node(a.value + b.value, (a, b), backward))

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"sub shapes {a.shape} - {b.shape}")

        def backward(g: np.ndarray):
            return g, -g

        return self._record(Node(a.value - b.value, (a, b), backward))

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes {a.shape} * {b.shape}")
        av, bv = a.value, b.value

        def backward(g: np.ndarray):
            return g * bv, g * av

        return self._record(Node(av * bv, (a, b), backward))

    def cmul(self, a: Node, c: np.ndarray) -> Node:
        """Elementwise multiply by a constant (non-differentiated) array."""
        cv = _as_matrix(c)
        if cv.shape != a.shape:
            raise ShapeError(f"cmul shapes {a.shape} * {cv.shape}")

        def backward(g: np.ndarray):
            return (g * cv,)

        return self._record(Node(a.value * cv, (a,), backward))

    def scale(self, a: Node, c: float) -> Node:
        def backward(g: np.ndarray):
            return (g * c,)

        return self._record(Node(a.value * c, (a,), backward))

    def leaky_relu(self, a: Node, slope: float) -> Node:
        out = leaky_relu_values(a.value, slope)
        factor = (a.value > 0.0) * (1.0 - slope) + slope  # subgradient at 0 is slope

        def backward(g: np.ndarray):
            return (g * factor,)

        return self._record(Node(out, (a,), backward))

    def relu(self, a: Node) -> Node:
        factor = (a.value > 0.0).astype(np.float64)  # subgradient at 0 is 0

        def backward(g: np.ndarray):
            return (g * factor,)

        return self._record(Node(np.maximum(a.value, 0.0), (a,), backward))

    def masked_softmax(self, a: Node, mask: np.ndarray) -> Node:
        m = np.asarray(mask, dtype=bool)
        out = _masked_softmax_kernel(a.value, m)

        def backward(g: np.ndarray):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - dot),)

        return self._record(Node(out, (a,), backward))

    def concat(self, parts: Sequence[Node], axis: int = 0) -> Node:
        if not parts:
            raise ValueError("concat of zero parts")
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g: np.ndarray):
            if axis == 0:
                return [g[offsets[i] : offsets[i + 1], :] for i in range(len(parts))]
            return [g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts))]

        value = np.concatenate([p.value for p in parts], axis=axis)
        return self._record(Node(value, tuple(parts), backward))

    def rows(self, a: Node, start: int, stop: int) -> Node:
        n = a.shape[0]
        if not (0 <= start < stop <= n):
            raise ShapeError(f"row slice [{start}:{stop}] of {a.shape}")
        shape = a.shape

        def backward(g: np.ndarray):
            out = np.zeros(shape)
            out[start:stop, :] = g
            return (out,)

        return self._record(Node(a.value[start:stop, :], (a,), backward))

    def mean(self, a: Node) -> Node:
        size = a.value.size

        def backward(g: np.ndarray):
            return (np.full(a.value.shape, g[0, 0] / size),)

        value = np.array([[a.value.mean()]])
        return self._record(Node(value, (a,), backward))

    def rownorm(self, a: Node) -> Node:
        """Per-row Euclidean norm, shape (n, 1). Zero rows get subgradient 0."""
        norms = np.sqrt((a.value**2).sum(axis=1, keepdims=True))
        av = a.value

        def backward(g: np.ndarray):
            safe = np.where(norms > 0.0, norms, 1.0)
            return (g * av / safe * (norms > 0.0),)

        return self._record(Node(norms, (a,), backward))

    def sqrt(self, a: Node) -> Node:
        if (a.value < 0.0).any():
            raise ValueError("sqrt of a negative entry")
        out = np.sqrt(a.value)

        def backward(g: np.ndarray):
            safe = np.where(out > 0.0, out, 1.0)
            return (g * 0.5 / safe * (out > 0.0),)

        return self._record(Node(out, (a,), backward))

    def reshape(self, a: Node, rows: int, cols: int) -> Node:
        if rows * cols != a.value.size:
            raise ShapeError(f"reshape {a.shape} -> ({rows}, {cols})")
        shape = a.shape

        def backward(g: np.ndarray):
            return (g.reshape(shape),)

        return self._record(Node(a.value.reshape(rows, cols), (a,), backward))

    # -- block primitives (x viewed as B stacked blocks of n rows) ------------

    def pair_source(self, a: Node, n: int) -> Node:
        """Rows of all ordered in-block pairs, carrying the second (source)
        vertex: output row (b, i, j) equals input row (b, j)."""
        rows, cols = a.shape
        if rows % n:
            raise ShapeError(f"{rows} rows do not split into blocks of {n}")
        b = rows // n
        value = np.broadcast_to(a.value.reshape(b, 1, n, cols), (b, n, n, cols)).reshape(
            b * n * n, cols
        )

        def backward(g: np.ndarray):
            return (g.reshape(b, n, n, cols).sum(axis=1).reshape(rows, cols),)

        return self._record(Node(np.ascontiguousarray(value), (a,), backward))

    def pair_target(self, a: Node, n: int) -> Node:
        """Rows of all ordered in-block pairs, carrying the first (target)
        vertex: output row (b, i, j) equals input row (b, i)."""
        rows, cols = a.shape
        if rows % n:
            raise ShapeError(f"{rows} rows do not split into blocks of {n}")
        b = rows // n
        value = np.broadcast_to(a.value.reshape(b, n, 1, cols), (b, n, n, cols)).reshape(
            b * n * n, cols
        )

        def backward(g: np.ndarray):
            return (g.reshape(b, n, n, cols).sum(axis=2).reshape(rows, cols),)

        return self._record(Node(np.ascontiguousarray(value), (a,), backward))

    def mul_col(self, a: Node, col: Node) -> Node:
        """Scale every row of ``a`` by the matching entry of a column vector."""
        if col.shape != (a.shape[0], 1):
            raise ShapeError(f"mul_col shapes {a.shape} * {col.shape}")
        av, cv = a.value, col.value

        def backward(g: np.ndarray):
            return g * cv, (g * av).sum(axis=1, keepdims=True)

        return self._record(Node(av * cv, (a, col), backward))

    def sum_blocks(self, a: Node, n: int) -> Node:
        """Sum every ``n`` consecutive rows."""
        rows, cols = a.shape
        if rows % n:
            raise ShapeError(f"{rows} rows do not split into blocks of {n}")

        def backward(g: np.ndarray):
            return (np.repeat(g, n, axis=0),)

        return self._record(Node(a.value.reshape(-1, n, cols).sum(axis=1), (a,), backward))

    def take_rows(self, a: Node, indices: np.ndarray) -> Node:
        """Select rows by unique indices."""
        idx = np.asarray(indices, dtype=np.intp)
        if np.unique(idx).size != idx.size:
            raise ValueError("take_rows requires unique indices")
        shape = a.shape

        def backward(g: np.ndarray):
            out = np.zeros(shape, dtype=g.dtype)
            out[idx] = g
            return (out,)

        return self._record(Node(np.ascontiguousarray(a.value[idx]), (a,), backward))

    # -- reverse pass ----------------------------------------------------------

    def backward(self, output: Node) -> None:
        """Accumulate d(output)/d(param) into every bound Parameter's grad."""
        if output.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar output, got {output.shape}")
        for p in self._params:
            p.grad = np.zeros_like(p.value)
        adjoint: list[np.ndarray | None] = [None] * len(self.nodes)
        # Adjoints start as possibly-aliased views and are copied only when a
        # second contribution arrives (copy-on-write).
        owned = [False] * len(self.nodes)
        adjoint[output.index] = np.ones((1, 1))
        for node in reversed(self.nodes[: output.index + 1]):
            g = adjoint[node.index]
            if g is None:
                continue
            if node.param is not None:
                node.param.grad = node.param.grad + g
            if node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.needs_grad:
                    continue
                idx = parent.index
                if adjoint[idx] is None:
                    adjoint[idx] = pg
                elif owned[idx]:
                    adjoint[idx] += pg
                else:
                    adjoint[idx] = adjoint[idx] + pg
                    owned[idx] = True


# ---------------------------------------------------------------------------
# Finite-difference checking


def grad_check(
    fn: Callable[[Tape], Node],
    params: Sequence[Parameter],
    h: float = 1e-6,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must build a deterministic scalar computation on the supplied tape
    from the current parameter values. The reported error per coordinate is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.

    The check runs in extended precision where the platform provides it:
    with 64-bit arithmetic the difference quotient carries ~1e-10 of
    cancellation noise, which would swamp legitimately tiny gradients.
    """
    originals = [p.value for p in params]
    try:
        for p in params:
            p.value = p.value.astype(np.longdouble)
        tape = Tape()
        out = fn(tape)
        if not np.isfinite(out.value).all():
            raise FloatingPointError("non-finite output in grad_check")
        tape.backward(out)
        analytic = [p.grad.copy() for p in params]

        def evaluate() -> np.longdouble:
            val = fn(Tape()).value
            if not np.isfinite(val).all():
                raise FloatingPointError("non-finite intermediate in grad_check")
            return val[0, 0]

        step = np.longdouble(h)
        worst = 0.0
        for p, g_ad in zip(params, analytic):
            flat = p.value.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = evaluate()
                flat[i] = orig - step
                f_minus = evaluate()
                flat[i] = orig
                g_fd = float((f_plus - f_minus) / (2.0 * step))
                g = float(g_ad.ravel()[i])
                err = abs(g - g_fd) / max(1e-8, abs(g) + abs(g_fd))
                worst = max(worst, err)
        return worst
    finally:
        for p, value in zip(params, originals):
            p.value = value
            p.grad = np.zeros_like(value)
