"""Linear maps between registers as superoperators and Choi matrices.

Vectorization is row-major, so ``vec(A X B) = (A kron B^T) vec(X)``.
Choi matrices are unnormalized with the input factor first:
``J = sum_ij |i><j| kron Phi(|i><j|)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import HermitianOp, RegisterShape, ShapeError, hermitize


class NotCPTPError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ChannelRep:
    """Linear map from operators on ``in_shape`` to operators on ``out_shape``."""

    in_shape: RegisterShape
    out_shape: RegisterShape
    superop: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.superop, dtype=complex)
        want = (self.out_shape.dim ** 2, self.in_shape.dim ** 2)
        if s.shape != want:
            raise ShapeError(f"superoperator shape {s.shape}, expected {want}")
        s.setflags(write=False)
        object.__setattr__(self, "superop", s)

    @property
    def din(self) -> int:
        return self.in_shape.dim

    @property
    def dout(self) -> int:
        return self.out_shape.dim

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        return (self.superop @ np.asarray(x).reshape(-1)).reshape(self.dout, self.dout)

    def __call__(self, x: HermitianOp) -> HermitianOp:
        if x.shape != self.in_shape:
            raise ShapeError(f"input lives on {x.shape}, map expects {self.in_shape}")
        return HermitianOp(self.out_shape, hermitize(self.apply_array(x.mat)))

    apply = __call__

    def choi(self) -> np.ndarray:
        di, do = self.din, self.dout
        t = self.superop.reshape(do, do, di, di)
        return t.transpose(2, 0, 3, 1).reshape(di * do, di * do)

    @classmethod
    def from_choi(cls, in_shape, out_shape, J) -> "ChannelRep":
        di, do = in_shape.dim, out_shape.dim
        t = np.asarray(J).reshape(di, do, di, do)
        return cls(in_shape, out_shape, t.transpose(1, 3, 0, 2).reshape(do * do, di * di))

    @classmethod
    def from_kraus(cls, in_shape, out_shape, kraus: Sequence[np.ndarray]) -> "ChannelRep":
        s = sum(np.kron(k, k.conj()) for k in kraus)
        return cls(in_shape, out_shape, s)

    def compose(self, first: "ChannelRep") -> "ChannelRep":
        """``self o first``."""
        if first.out_shape != self.in_shape:
            raise ShapeError("cannot compose: register mismatch")
        return ChannelRep(first.in_shape, self.out_shape, self.superop @ first.superop)

    def __sub__(self, other: "ChannelRep") -> "ChannelRep":
        if (self.in_shape, self.out_shape) != (other.in_shape, other.out_shape):
            raise ShapeError("cannot subtract maps on different registers")
        return ChannelRep(self.in_shape, self.out_shape, self.superop - other.superop)

    def cptp_defect(self) -> tuple[float, float]:
        """``(negativity of the Choi matrix, trace-preservation error)``."""
        J = hermitize(self.choi())
        neg = max(0.0, -float(np.linalg.eigvalsh(J)[0]))
        tp = ptrace_out(J, self.din, self.dout)
        return neg, float(np.max(np.abs(tp - np.eye(self.din))))

    def is_cptp(self, tol: float = 1e-8) -> bool:
        neg, tp = self.cptp_defect()
        return neg <= tol and tp <= tol


def ptrace_out(J: np.ndarray, din: int, dout: int) -> np.ndarray:
    return np.einsum("iaja->ij", J.reshape(din, dout, din, dout))


def identity_channel(shape: RegisterShape) -> ChannelRep:
    return ChannelRep(shape, shape, np.eye(shape.dim ** 2, dtype=complex))


def unitary_channel(shape: RegisterShape, U: np.ndarray) -> ChannelRep:
    return ChannelRep.from_kraus(shape, shape, [np.asarray(U, dtype=complex)])


def replacer_channel(in_shape: RegisterShape, state: HermitianOp) -> ChannelRep:
    """``X -> Tr[X] state``."""
    tr = np.eye(in_shape.dim).reshape(-1)
    return ChannelRep(in_shape, state.shape, np.outer(state.mat.reshape(-1), tr))
