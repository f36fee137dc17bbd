"""QAP problem data, QAPLIB ingestion and the lifted quadratic cost.

Conventions used throughout the package:

* ``vec`` stacks columns, so ``vec(X)[i + j*n] == X[i, j]``.
* A permutation ``perm`` maps row ``i`` to column ``perm[i]``; its matrix has
  ``X[i, perm[i]] = 1``.
* The objective is the trace form ``<X, A X B + C>``, which equals
  ``sum_{i,k} A[i,k] B[perm[k], perm[i]] + sum_i C[i, perm[i]]``.  For symmetric
  ``A`` or ``B`` (every shipped QAPLIB instance) this is the usual
  Koopmans-Beckmann value ``sum a_ik b_perm(i)perm(k)``.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Optional, Union

import numpy as np


class ParseError(ValueError):
    """Malformed QAPLIB input; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConsistencyError(ValueError):
    """A solution file does not reproduce its stated objective value."""


@dataclass(frozen=True)
class QapInstance:
    """Immutable QAP datum ``min_{X in P_n} <X, A X B + C>``."""

    name: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray = None  # type: ignore[assignment]
    best_known: Optional[float] = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        n = A.shape[0]
        C = np.zeros((n, n)) if self.C is None else np.array(self.C, dtype=float)
        if n < 2:
            raise ValueError("QAP instances need n >= 2")
        for label, M in (("A", A), ("B", B), ("C", C)):
            if M.shape != (n, n):
                raise ValueError(f"{label} must be {n}x{n}, got {M.shape}")
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{label} has non-finite entries")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.n * self.n

    def with_best_known(self, value: Optional[float]) -> "QapInstance":
        return replace(self, best_known=value)


@dataclass(frozen=True)
class ShiftRecord:
    """Entry-wise minima removed by :func:`preprocess`."""

    a: float
    b: float
    c: float
    correction: float  # add to the shifted objective to recover the original


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``range(n)``; ``image[i]`` is the column assigned to row ``i``."""

    image: tuple

    def __init__(self, image: Iterable[int]):
        img = tuple(int(i) for i in image)
        if sorted(img) != list(range(len(img))):
            raise ValueError(f"not a permutation of 0..{len(img) - 1}: {img}")
        object.__setattr__(self, "image", img)

    @property
    def n(self) -> int:
        return len(self.image)

    def __len__(self) -> int:
        return len(self.image)

    def __iter__(self):
        return iter(self.image)

    def array(self) -> np.ndarray:
        return np.asarray(self.image, dtype=np.intp)

    def matrix(self) -> np.ndarray:
        X = np.zeros((self.n, self.n))
        X[np.arange(self.n), self.array()] = 1.0
        return X

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.array()))

    def swapped(self, i: int, j: int) -> "Permutation":
        img = list(self.image)
        img[i], img[j] = img[j], img[i]
        return Permutation(img)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(range(n))

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "Permutation":
        X = np.asarray(X)
        if not (np.all((X == 0) | (X == 1)) and np.all(X.sum(0) == 1) and np.all(X.sum(1) == 1)):
            raise ValueError("matrix is not a permutation matrix")
        return cls(np.argmax(X, axis=1))


# ---------------------------------------------------------------------------
# QAPLIB formats

_TOKEN = re.compile(rb"\S+")


def _read_bytes(stream: Union[bytes, str, IO]) -> bytes:
    if isinstance(stream, bytes):
        return stream
    if isinstance(stream, str):
        return stream.encode()
    data = stream.read()
    return data.encode() if isinstance(data, str) else data


def _tokens(data: bytes):
    for m in _TOKEN.finditer(data):
        yield m.group(), m.start()


def _number(tok: bytes, offset: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"malformed number {tok!r}", offset) from None


def parse_dat(stream: Union[bytes, str, IO], name: str = "", best_known: Optional[float] = None) -> QapInstance:
    """Parse a QAPLIB ``.dat`` stream: ``n``, then ``A`` and ``B`` row-major.

    Some QAPLIB files append ``C``; a trailing block of exactly ``n*n`` numbers
    is accepted as the linear term.  Any other count is an error.
    """
    data = _read_bytes(stream)
    toks = list(_tokens(data))
    if not toks:
        raise ParseError("empty stream", 0)
    head, off = toks[0]
    try:
        n = int(head)
    except ValueError:
        raise ParseError(f"expected integer size, got {head!r}", off) from None
    if n < 2:
        raise ParseError(f"size n={n} must be at least 2", off)
    body = toks[1:]
    nn = n * n
    if len(body) not in (2 * nn, 3 * nn):
        at = body[min(len(body), 2 * nn) - 1][1] if body else len(data)
        if len(body) > 2 * nn:
            at = body[2 * nn][1]
        raise ParseError(f"expected {2 * nn} numbers for n={n}, found {len(body)}", at)
    vals = np.array([_number(t, o) for t, o in body])
    A = vals[:nn].reshape(n, n)
    B = vals[nn:2 * nn].reshape(n, n)
    C = vals[2 * nn:].reshape(n, n) if len(body) == 3 * nn else None
    return QapInstance(name=name, A=A, B=B, C=C, best_known=best_known)


def serialize_dat(inst: QapInstance) -> str:
    """Inverse of :func:`parse_dat` (``C`` is written only when nonzero)."""

    def block(M):
        return "\n".join(" ".join(repr(float(x)) if not float(x).is_integer() else str(int(x)) for x in row) for row in M)

    parts = [str(inst.n), "", block(inst.A), "", block(inst.B)]
    if np.any(inst.C != 0):
        parts += ["", block(inst.C)]
    return "\n".join(parts) + "\n"


@dataclass(frozen=True)
class SlnRecord:
    perm: Permutation
    value: float
    orientation: str  # "direct" or "inverse"


def parse_sln(stream: Union[bytes, str, IO], inst: QapInstance, rtol: float = 1e-6) -> SlnRecord:
    """Parse a QAPLIB ``.sln`` file and check it against ``inst``.

    The permutation is 1-indexed and may wrap across lines.  Both orientations
    are tried since published files disagree on whether they list the
    permutation or its inverse.
    """
    data = _read_bytes(stream)
    toks = list(_tokens(data))
    if len(toks) < 2:
        raise ParseError("expected header 'n value'", 0)
    try:
        n = int(toks[0][0])
    except ValueError:
        raise ParseError(f"bad size {toks[0][0]!r}", toks[0][1]) from None
    value = _number(*toks[1])
    entries = toks[2:]
    if n != inst.n:
        raise ParseError(f"solution size {n} does not match instance size {inst.n}", toks[0][1])
    if len(entries) != n:
        at = entries[n][1] if len(entries) > n else len(data)
        raise ParseError(f"expected {n} permutation entries, found {len(entries)}", at)
    img = []
    for tok, off in entries:
        try:
            k = int(tok)
        except ValueError:
            raise ParseError(f"bad permutation entry {tok!r}", off) from None
        if not 1 <= k <= n:
            raise ParseError(f"permutation entry {k} outside 1..{n}", off)
        img.append(k - 1)
    if len(set(img)) != n:
        raise ParseError("permutation has repeated entries", entries[0][1])
    perm = Permutation(img)
    scale = max(1.0, abs(value))
    for orient, cand in (("direct", perm), ("inverse", perm.inverse())):
        if abs(objective(inst, cand) - value) <= rtol * scale:
            return SlnRecord(cand, value, orient)
    raise ConsistencyError(
        f"neither orientation reproduces {value}: direct={objective(inst, perm)}, "
        f"inverse={objective(inst, perm.inverse())}"
    )


def load_dat(path: Union[str, Path], best_known: Optional[float] = None) -> QapInstance:
    path = Path(path)
    with open(path, "rb") as fh:
        inst = parse_dat(fh, name=path.stem)
    if best_known is None:
        best_known = known_best_values().get(path.stem)
    return inst.with_best_known(best_known)


def known_best_values() -> dict:
    """Best-known objective values for the bundled instances."""
    text = resources.files("dcqap.data").joinpath("best_known.json").read_text()
    return {k: float(v) for k, v in json.loads(text).items()}


def bundled_instance(name: str) -> QapInstance:
    """Load one of the QAPLIB instances shipped in ``dcqap/data``."""
    ref = resources.files("dcqap.data").joinpath(f"{name}.dat")
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled instance named {name!r}")
    inst = parse_dat(ref.read_bytes(), name=name)
    return inst.with_best_known(known_best_values().get(name))


def bundled_names() -> list:
    return sorted(p.name[:-4] for p in resources.files("dcqap.data").iterdir() if p.name.endswith(".dat"))


# ---------------------------------------------------------------------------
# objective and preprocessing


def objective(inst: QapInstance, perm: Union[Permutation, Iterable[int]]) -> float:
    """``<X, A X B + C>`` for the permutation matrix of ``perm`` in O(n^2)."""
    pi = perm.array() if isinstance(perm, Permutation) else np.asarray(list(perm), dtype=np.intp)
    quad = np.sum(inst.A * inst.B[np.ix_(pi, pi)].T)
    lin = inst.C[np.arange(inst.n), pi].sum()
    return float(quad + lin)


def preprocess(inst: QapInstance) -> tuple:
    """Shift ``A``, ``B``, ``C`` by their minimum entries so all are nonnegative.

    Returns ``(shifted, record)``.  For every permutation,
    ``objective(inst, perm) == objective(shifted, perm) + record.correction``.
    """
    n = inst.n
    a, b, c = float(inst.A.min()), float(inst.B.min()), float(inst.C.min())
    A = inst.A - a
    B = inst.B - b
    C = inst.C - c
    # <X,(A'+aJ)X(B'+bJ)> = <X,A'XB'> + a*sum(B') + b*sum(A') + a*b*n^2, and <X,cJ> = c*n
    correction = a * B.sum() + b * A.sum() + a * b * n * n + c * n
    shifted = replace(inst, A=A, B=B, C=C)
    return shifted, ShiftRecord(a, b, c, float(correction))


# ---------------------------------------------------------------------------
# lifted cost  C~ = sym(B^T kron A) + Diag(vec C)


@dataclass(frozen=True)
class LiftedCost:
    """Matrix-free symmetric ``p x p`` operator ``C~ / scale``.

    ``scale`` is applied as a divisor: ``apply(V) == V @ dense() `` where
    ``dense()`` already includes the division.
    """

    A: np.ndarray
    B: np.ndarray
    c_vec: np.ndarray
    scale: float = 1.0

    @classmethod
    def from_instance(cls, inst: QapInstance, normalize: bool = False) -> "LiftedCost":
        cost = cls(inst.A, inst.B, inst.C.reshape(-1, order="F").copy(), 1.0)
        if normalize:
            s = cost.spectral_norm()
            if s > 0:
                cost = replace(cost, scale=s)
        return cost

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.n * self.n

    def apply(self, V: np.ndarray) -> np.ndarray:
        """Row-wise product ``V @ C~`` in O(m n^3)."""
        V = np.asarray(V, dtype=float)
        squeeze = V.ndim == 1
        V2 = V.reshape(1, -1) if squeeze else V
        n = self.n
        if V2.shape[1] != n * n:
            raise ValueError(f"expected {n * n} columns, got {V2.shape[1]}")
        # row r of V is vec(Z_r); C-order reshape yields Z_r^T
        Zt = V2.reshape(-1, n, n)
        # (A Z B)^T = B^T Z^T A^T  and  (A^T Z B^T)^T = B Z^T A
        out = 0.5 * (self.B.T @ Zt @ self.A.T + self.B @ Zt @ self.A)
        out = out.reshape(V2.shape) + V2 * self.c_vec
        if self.scale != 1.0:
            out /= self.scale
        return out.reshape(V.shape)

    def quad(self, V: np.ndarray) -> float:
        """``<C~, V^T V>``."""
        return float(np.vdot(self.apply(V), V))

    def dense(self) -> np.ndarray:
        K = np.kron(self.B.T, self.A)
        return (0.5 * (K + K.T) + np.diag(self.c_vec)) / self.scale

    def spectral_norm(self, iters: int = 500, tol: float = 1e-10) -> float:
        """``||C~||_2`` of the unscaled operator by power iteration on ``C~^2``."""
        p = self.p
        unscaled = replace(self, scale=1.0)
        x = np.ones(p) / np.sqrt(p) + 1e-3 * np.cos(np.arange(p))
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iters):
            y = unscaled.apply(unscaled.apply(x))
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0
            x = y / ny
            new = np.sqrt(ny)
            if abs(new - est) <= tol * new:
                est = new
                break
            est = new
        return float(est)


# ---------------------------------------------------------------------------
# reporting metrics


@dataclass(frozen=True)
class Metrics:
    obj: float
    infeas: float
    gap_pct: Optional[float]


def relative_gap(obj: float, best_known: Optional[float]) -> Optional[float]:
    """Percent gap ``(obj - best) / best * 100``; ``None`` when unknown."""
    if best_known is None or best_known == 0:
        return None
    return (obj - best_known) / best_known * 100.0


def infeasibility(X_raw: np.ndarray) -> float:
    """``||X^T X - I||_F + ||min(X, 0)||_F``."""
    X = np.asarray(X_raw, dtype=float)
    return float(np.linalg.norm(X.T @ X - np.eye(X.shape[1])) + np.linalg.norm(np.minimum(X, 0.0)))


def metrics(X_raw: np.ndarray, proj: Permutation, inst: QapInstance) -> Metrics:
    obj = objective(inst, proj)
    return Metrics(obj=obj, infeas=infeasibility(X_raw), gap_pct=relative_gap(obj, inst.best_known))
