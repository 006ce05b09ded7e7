"""Periodic grids on the 1- and 2-torus with spectral operators.

Fields are plain numpy arrays of shape (N,) or (N, N); row index is the first
variable.  All quadrature is equal-weight with weight h**d, exact for
trigonometric polynomials below the Nyquist mode.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    N: int
    dim: int = 1

    def __post_init__(self):
        if self.N < 16 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 16, got {self.N}")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")

    @property
    def h(self) -> float:
        return 2.0 * math.pi / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N ** self.dim

    def points(self) -> np.ndarray:
        return self.h * np.arange(self.N)

    def mesh(self) -> tuple[np.ndarray, ...]:
        y = self.points()
        if self.dim == 1:
            return (y,)
        return tuple(np.meshgrid(y, y, indexing="ij"))

    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers in FFT order; the Nyquist mode appears as -N/2."""
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    def k_squared(self) -> np.ndarray:
        k2 = self.wavenumbers() ** 2
        if self.dim == 1:
            return k2
        return k2[:, None] + k2[None, :]

    def derivative_wavenumbers(self) -> np.ndarray:
        """i*k multiplier for d/dy with the Nyquist entry zeroed."""
        k = self.wavenumbers().copy()
        k[self.N // 2] = 0.0
        return 1j * k

    def check(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field)
        if field.shape != self.shape:
            raise GridMismatch(f"field shape {field.shape} does not match grid {self.shape}")
        return field

    @classmethod
    def of(cls, field: np.ndarray) -> "TorusGrid":
        field = np.asarray(field)
        if field.ndim == 2 and field.shape[0] != field.shape[1]:
            raise GridMismatch(f"2D fields must be square, got {field.shape}")
        return cls(field.shape[0], field.ndim)


def forward(field: np.ndarray) -> np.ndarray:
    return sfft.fftn(field, workers=1)


def inverse(modes: np.ndarray) -> np.ndarray:
    return sfft.ifftn(modes, workers=1)


def apply_multiplier(field: np.ndarray, mult: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier; real input with an even real multiplier stays real."""
    field = np.asarray(field)
    if np.isrealobj(field) and np.isrealobj(mult):
        axes = tuple(range(field.ndim))
        half = mult[..., : field.shape[-1] // 2 + 1]
        return sfft.irfftn(half * sfft.rfftn(field, axes=axes, workers=1),
                           s=field.shape, axes=axes, workers=1)
    return inverse(mult * forward(field))


def heat_step(field: np.ndarray, nu: float, dt: float) -> np.ndarray:
    """Exact heat semigroup exp(nu * dt * Laplacian) as the multiplier exp(-nu |k|^2 dt)."""
    if nu < 0 or dt < 0:
        raise ValueError("nu and dt must be nonnegative")
    grid = TorusGrid.of(field)
    if nu == 0 or dt == 0:
        return np.array(field, copy=True)
    return apply_multiplier(field, np.exp(-nu * dt * grid.k_squared()))


def laplacian_apply(field: np.ndarray) -> np.ndarray:
    """Spectral -Laplacian: multiply mode k by |k|^2."""
    grid = TorusGrid.of(field)
    return apply_multiplier(field, grid.k_squared())


def gradient(field: np.ndarray, axis: int = 0) -> np.ndarray:
    grid = TorusGrid.of(field)
    ik = grid.derivative_wavenumbers()
    if field.ndim == 2:
        ik = ik[:, None] if axis == 0 else ik[None, :]
    return inverse(ik * forward(field))


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """<a, b> = integral of a * conj(b)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise GridMismatch(f"shapes {a.shape} and {b.shape} differ")
    grid = TorusGrid.of(a)
    return complex(grid.h ** grid.dim * np.vdot(b, a))


def l2_norm(field: np.ndarray) -> float:
    grid = TorusGrid.of(field)
    return float(math.sqrt(grid.h ** grid.dim) * np.linalg.norm(np.ravel(field)))


def modal_norm(field: np.ndarray) -> float:
    """L2 norm from Fourier coefficients (Parseval)."""
    grid = TorusGrid.of(field)
    c = forward(field) / grid.size
    return float(math.sqrt((2 * math.pi) ** grid.dim) * np.linalg.norm(c.ravel()))


def h1_seminorm(field: np.ndarray) -> float:
    """|| |k| f_hat || in the same normalization as l2_norm."""
    grid = TorusGrid.of(field)
    c = forward(field) / grid.size
    return float(math.sqrt((2 * math.pi) ** grid.dim * np.sum(grid.k_squared() * np.abs(c) ** 2)))


def resample(field: np.ndarray, N_new: int) -> np.ndarray:
    """Trigonometric interpolation of a periodic field onto an N_new grid."""
    field = np.asarray(field)
    N = field.shape[0]
    if N_new == N:
        return field.copy()
    c = forward(field)
    out = np.zeros((N_new,) * field.ndim, dtype=complex)
    m = min(N, N_new) // 2
    keep = np.r_[0:m, -m + 1:0] if m > 1 else np.r_[0:1]
    idx = np.ix_(*([keep] * field.ndim))
    out[idx] = c[idx]
    res = inverse(out) * (N_new / N) ** field.ndim
    return res.real if np.isrealobj(field) else res


# ----------------------------------------------------------------- file formats

def write_csv(path: str | Path, field: np.ndarray) -> None:
    """One row per grid point in row-major order: index, real, imag."""
    flat = np.ravel(np.asarray(field, dtype=complex))
    with open(path, "w") as fh:
        fh.write("index,real,imag\n")
        for i, z in enumerate(flat):
            fh.write(f"{i},{float(z.real)!r},{float(z.imag)!r}\n")


def read_csv(path: str | Path, dim: int = 1) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    flat = data[:, 1] + 1j * data[:, 2]
    N = round(len(flat) ** (1.0 / dim))
    return flat.reshape((N,) * dim)


_HEADER = struct.Struct("<II")


def write_binary(path: str | Path, field: np.ndarray) -> None:
    """8-byte header (uint32 N, uint32 d) then interleaved re/im float64, little endian."""
    field = np.asarray(field, dtype=complex)
    grid = TorusGrid.of(field)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.N, grid.dim))
        fh.write(np.ascontiguousarray(field).astype("<c16").tobytes())


def read_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    N, dim = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if data.size != N ** dim:
        raise ValueError(f"payload has {data.size} values, header says {N}^{dim}")
    return data.reshape((N,) * dim).astype(complex)
