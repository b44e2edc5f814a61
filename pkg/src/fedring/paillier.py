"""The Paillier cryptosystem over plain integers.

Paillier is a public-key scheme that is additively homomorphic: multiplying
two ciphertexts modulo n^2 yields a ciphertext of the sum of the plaintexts.
This module implements key generation, encryption, and decryption on raw
residues in [0, n); fixed-point encoding of reals and vector packing live one
layer up in :mod:`fedring.csahe`.

Key generation is driven entirely by a caller-supplied generator so that the
same stream state always produces the same keys. Decryption uses the usual
CRT split over p and q. Big-integer modular exponentiation goes through
gmpy2 (GMP), which is what makes coordinate-wise encryption of
thousand-dimensional vectors practical.
"""

from __future__ import annotations

import gmpy2
import numpy as np

VALID_KEY_BITS = (1024, 2048, 3072)


def _random_int_below(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in [0, bound) from the stream, via rejection sampling."""
    n_bytes = (bound.bit_length() + 7) // 8 + 1
    while True:
        candidate = int.from_bytes(rng.bytes(n_bytes), "big")
        candidate >>= n_bytes * 8 - bound.bit_length()
        if candidate < bound:
            return candidate


def _random_prime(bits: int, rng: np.random.Generator) -> int:
    """Deterministic-in-stream prime of exactly `bits` bits.

    Draws a random odd candidate with the top two bits set (so products of
    two such primes have full length) and walks upward to the next prime.
    """
    while True:
        candidate = int.from_bytes(rng.bytes(bits // 8), "big")
        candidate |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        candidate &= (1 << bits) - 1
        prime = int(gmpy2.next_prime(candidate))
        if prime.bit_length() == bits:
            return prime


class PaillierPublicKey:
    """Public half of a Paillier keypair; allows encryption and homomorphic addition.

    With the standard choice g = n + 1, encryption of m with randomiser r is
    (1 + n*m) * r^n mod n^2, avoiding one full exponentiation.
    """

    def __init__(self, n: int):
        self.n = int(n)
        self.nsquare = self.n * self.n
        self._half_n = self.n // 2

    def __eq__(self, other):
        return isinstance(other, PaillierPublicKey) and other.n == self.n

    def __hash__(self):
        return hash(("paillier-pk", self.n))

    def encrypt(self, m: int, rng: np.random.Generator) -> int:
        """Encrypt a residue m in [0, n) into a ciphertext in [0, n^2)."""
        m = int(m) % self.n
        r = _random_int_below(rng, self.n - 1) + 1
        obfuscator = gmpy2.powmod(r, self.n, self.nsquare)
        return int((1 + self.n * m) * obfuscator % self.nsquare)

    def add(self, c1: int, c2: int) -> int:
        """Ciphertext of the sum of the two encrypted plaintexts."""
        return int(gmpy2.mul(c1, c2) % self.nsquare)

    def to_dict(self) -> dict:
        return {"n": hex(self.n)}

    @classmethod
    def from_dict(cls, data: dict) -> "PaillierPublicKey":
        return cls(int(data["n"], 16))


class PaillierPrivateKey:
    """Private half of a Paillier keypair; the only object that can decrypt."""

    def __init__(self, p: int, q: int):
        self.p = int(p)
        self.q = int(q)
        self.public_key = PaillierPublicKey(self.p * self.q)
        # CRT decryption caches, as usual: h_p = L(g^(p-1) mod p^2)^-1 mod p.
        n = self.public_key.n
        self.hp = int(gmpy2.invert(self._l_func(gmpy2.powmod(n + 1, self.p - 1, self.p * self.p), self.p), self.p))
        self.hq = int(gmpy2.invert(self._l_func(gmpy2.powmod(n + 1, self.q - 1, self.q * self.q), self.q), self.q))
        self._q_inv_p = int(gmpy2.invert(self.q, self.p))

    @staticmethod
    def _l_func(u, n):
        return (u - 1) // n

    def decrypt(self, ciphertext: int) -> int:
        """Recover the plaintext residue in [0, n)."""
        c = int(ciphertext)
        mp = int(self._l_func(gmpy2.powmod(c, self.p - 1, self.p * self.p), self.p) * self.hp % self.p)
        mq = int(self._l_func(gmpy2.powmod(c, self.q - 1, self.q * self.q), self.q) * self.hq % self.q)
        # CRT combine.
        u = (mp - mq) * self._q_inv_p % self.p
        return (mq + u * self.q) % self.public_key.n

    def to_dict(self) -> dict:
        return {"p": hex(self.p), "q": hex(self.q)}

    @classmethod
    def from_dict(cls, data: dict) -> "PaillierPrivateKey":
        return cls(int(data["p"], 16), int(data["q"], 16))


def generate_keypair(bits: int, rng: np.random.Generator) -> PaillierPrivateKey:
    """Generate a Paillier keypair with an n of `bits` bits.

    Only the standard sizes 1024/2048/3072 are accepted; anything else is a
    misconfiguration, not a tunable.
    """
    if bits not in VALID_KEY_BITS:
        raise ValueError(f"key size must be one of {VALID_KEY_BITS}, got {bits}")
    half = bits // 2
    p = _random_prime(half, rng)
    while True:
        q = _random_prime(half, rng)
        if q != p:
            break
    return PaillierPrivateKey(p, q)
