"""Dense parameter vectors, deterministic stream RNG, and fixed-point encoding.

Parameter vectors are plain 1-D float64 numpy arrays throughout the package;
the helpers here validate them. Randomness comes from counter-based Philox
generators keyed by (seed, stream label), so every consumer owns an
independent stream whose draws do not depend on scheduling or on what other
components do with their own streams.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonFiniteError


def derive_stream(seed: int, *labels: str) -> np.random.Generator:
    """Return an independent, deterministic generator for (seed, labels).

    Identical arguments always yield identical draw sequences. Distinct
    labels give statistically independent streams (the label path is hashed
    into the Philox key), so per-purpose streams can be handed out without
    coordinating draw counts.
    """
    digest = hashlib.sha256(repr(int(seed)).encode("ascii"))
    for label in labels:
        digest.update(b"/")
        digest.update(label.encode("utf-8"))
    entropy = int.from_bytes(digest.digest(), "big")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def gaussian_vector(dim: int, mean: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Draw dim i.i.d. samples from N(mean, sigma^2) off the given stream."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return rng.normal(mean, sigma, dim)


def check_vector(values, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def ensure_finite(arr: np.ndarray, context: str) -> np.ndarray:
    """Raise NonFiniteError if the array contains NaN or infinity."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {context}")
    return arr


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding into the residues [0, 2^modulus_bits).

    A real x is stored as round(x * 2^scale_bits), rounding half away from
    zero; negative values occupy the upper half of the modulus, matching the
    modular arithmetic of an additively homomorphic plaintext space. The
    defaults leave enough headroom that 2^20 summands of magnitude up to
    2^10 cannot overflow the signed range.

    Round-trip exactness within 2^-scale_bits holds while |x| * 2^scale_bits
    stays below 2^53 (float64 integer precision); the signed range check is
    enforced up to 2^(modulus_bits - scale_bits - 1).
    """

    scale_bits: int = 32
    modulus_bits: int = 64

    def __post_init__(self):
        if self.scale_bits < 1:
            raise ValueError(f"scale_bits must be >= 1, got {self.scale_bits}")
        if self.modulus_bits <= self.scale_bits + 1:
            raise ValueError(
                f"modulus_bits={self.modulus_bits} leaves no integer headroom over scale_bits={self.scale_bits}"
            )

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def modulus(self) -> int:
        return 1 << self.modulus_bits

    @property
    def half_modulus(self) -> int:
        return 1 << (self.modulus_bits - 1)

    @property
    def max_abs(self) -> float:
        """Largest |x| guaranteed encodable."""
        return float(self.half_modulus - 1) / float(self.scale)

    def encode(self, x: float) -> int:
        """Encode one real into [0, modulus); OverflowError outside the signed range."""
        x = float(x)
        if not math.isfinite(x):
            raise NonFiniteError("cannot encode non-finite value")
        scaled = x * self.scale
        magnitude = int(math.floor(abs(scaled) + 0.5))
        if magnitude >= self.half_modulus:
            raise OverflowError(
                f"|{x}| * 2^{self.scale_bits} exceeds the signed range of a "
                f"{self.modulus_bits}-bit plaintext space"
            )
        signed = -magnitude if scaled < 0 else magnitude
        return signed % self.modulus

    def decode(self, n: int) -> float:
        """Inverse of encode up to 2^-scale_bits; residues >= modulus/2 are negative."""
        n = int(n)
        if not 0 <= n < self.modulus:
            raise ValueError(f"residue {n} outside [0, 2^{self.modulus_bits})")
        if n >= self.half_modulus:
            n -= self.modulus
        return n / self.scale

    def encode_vector(self, values) -> list[int]:
        arr = check_vector(values, name="plaintext vector")
        return [self.encode(v) for v in arr]

    def decode_vector(self, residues) -> np.ndarray:
        return np.array([self.decode(n) for n in residues], dtype=np.float64)

    def check_sum_headroom(self, n_summands: int, max_abs: float) -> None:
        """Reject configurations where summing could wrap the signed range."""
        if n_summands < 1:
            raise ValueError("n_summands must be >= 1")
        bound = int(math.ceil(n_summands * abs(float(max_abs)) * self.scale))
        if bound >= self.half_modulus:
            raise OverflowError(
                f"{n_summands} summands of magnitude up to {max_abs} can exceed the "
                f"signed range of a {self.modulus_bits}-bit plaintext space"
            )


DEFAULT_CODEC = FixedPointCodec()
