"""Cyclic secure aggregation with an additively homomorphic cipher.

The protocol: participants form a loop; a randomly chosen initiator adds a
large Gaussian mask to its own gradient, encrypts the result under the shared
public key, and sends it into the loop. Every other participant performs the
two-step encryption-summation — encrypt its own gradient, homomorphically add
it to the transiting ciphertext — and forwards. When the ciphertext returns,
the initiator homomorphically subtracts the mask and decrypts, obtaining the
plain sum of all gradients while no participant ever saw another's gradient
in the clear.

Two cipher backends share one interface: "paillier" (the real thing) and
"null" (fixed-point encoding with modular addition and no encryption), which
exists so tests can assert that encryption changes no aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DecryptError, DimensionError, ProtocolError, SchemeMismatchError
from .numeric import FixedPointCodec, check_vector, gaussian_vector
from .paillier import PaillierPrivateKey, PaillierPublicKey, generate_keypair

SCHEME_NULL = "null"
SCHEME_PAILLIER = "paillier"

# The mask's standard deviation must be "large"; below this the noise no
# longer drowns a gradient coordinate and the type-II argument breaks down.
MIN_MASK_SIGMA = 100.0


@dataclass(frozen=True)
class NullKey:
    """Stand-in key for the null scheme; carries only the codec modulus."""

    modulus: int


@dataclass(frozen=True)
class AheKeyPair:
    """Key material plus the fixed-point codec the scheme encodes with."""

    public_key: object
    private_key: object
    codec: FixedPointCodec
    scheme_tag: str

    @property
    def key_id(self) -> int:
        if self.scheme_tag == SCHEME_PAILLIER:
            return self.public_key.n
        return self.public_key.modulus


def keygen(bits: int, codec: FixedPointCodec, rng: np.random.Generator) -> AheKeyPair:
    """Generate a Paillier keypair sized `bits`, deterministic in the stream."""
    sk = generate_keypair(bits, rng)
    return AheKeyPair(sk.public_key, sk, codec, SCHEME_PAILLIER)


def null_keypair(codec: FixedPointCodec) -> AheKeyPair:
    key = NullKey(codec.modulus)
    return AheKeyPair(key, key, codec, SCHEME_NULL)


@dataclass(frozen=True)
class CipherVector:
    """A homomorphically encrypted fixed-point vector, one ciphertext per coordinate."""

    ciphertexts: tuple[int, ...]
    dim: int
    scheme_tag: str
    key_id: int

    def __post_init__(self):
        if len(self.ciphertexts) != self.dim:
            raise DimensionError(
                f"{len(self.ciphertexts)} ciphertexts for declared dim {self.dim}"
            )

    def to_bytes(self) -> bytes:
        """Length-prefixed big-endian serialisation of every element."""
        chunks = []
        for c in self.ciphertexts:
            payload = int(c).to_bytes(max(1, (int(c).bit_length() + 7) // 8), "big")
            chunks.append(len(payload).to_bytes(4, "big"))
            chunks.append(payload)
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes, scheme_tag: str, key_id: int) -> "CipherVector":
        ciphertexts = []
        offset = 0
        while offset < len(blob):
            if offset + 4 > len(blob):
                raise ValueError("truncated ciphertext serialisation")
            length = int.from_bytes(blob[offset: offset + 4], "big")
            offset += 4
            if offset + length > len(blob):
                raise ValueError("truncated ciphertext serialisation")
            ciphertexts.append(int.from_bytes(blob[offset: offset + length], "big"))
            offset += length
        return cls(tuple(ciphertexts), len(ciphertexts), scheme_tag, key_id)


def encrypt_vector(values, public_key, codec: FixedPointCodec,
                   rng: np.random.Generator | None = None) -> CipherVector:
    """Coordinate-wise encryption of the fixed-point encoding of `values`.

    Under Paillier each coordinate is freshly randomised, so two encryptions
    of the same vector differ. The null scheme stores the encodings as-is.
    """
    arr = check_vector(values, name="plaintext vector")
    encodings = codec.encode_vector(arr)
    if isinstance(public_key, PaillierPublicKey):
        if rng is None:
            raise ValueError("paillier encryption needs an RNG stream")
        half = codec.half_modulus
        cts = []
        for e in encodings:
            signed = e - codec.modulus if e >= half else e
            cts.append(public_key.encrypt(signed % public_key.n, rng))
        return CipherVector(tuple(cts), len(cts), SCHEME_PAILLIER, public_key.n)
    if isinstance(public_key, NullKey):
        return CipherVector(tuple(encodings), len(encodings), SCHEME_NULL, public_key.modulus)
    raise SchemeMismatchError(f"unknown public key type {type(public_key).__name__}")


def decrypt_vector(cv: CipherVector, private_key, codec: FixedPointCodec) -> np.ndarray:
    """Decrypt and decode; raises DecryptError if the key does not match."""
    if isinstance(private_key, PaillierPrivateKey):
        if cv.scheme_tag != SCHEME_PAILLIER or cv.key_id != private_key.public_key.n:
            raise DecryptError("ciphertext was not produced under this key")
        n = private_key.public_key.n
        values = []
        for c in cv.ciphertexts:
            m = private_key.decrypt(c)
            signed = m - n if m > n // 2 else m
            if abs(signed) >= codec.half_modulus:
                raise OverflowError("decrypted value exceeds the codec's signed range")
            values.append(codec.decode(signed % codec.modulus))
        return np.array(values, dtype=np.float64)
    if isinstance(private_key, NullKey):
        if cv.scheme_tag != SCHEME_NULL or cv.key_id != private_key.modulus:
            raise DecryptError("ciphertext was not produced under this key")
        return codec.decode_vector(cv.ciphertexts)
    raise SchemeMismatchError(f"unknown private key type {type(private_key).__name__}")


def add_cipher(a: CipherVector, b: CipherVector, public_key) -> CipherVector:
    """Homomorphic coordinate-wise addition of two cipher vectors."""
    if a.scheme_tag != b.scheme_tag:
        raise SchemeMismatchError(f"cannot add {a.scheme_tag} and {b.scheme_tag} ciphertexts")
    if a.key_id != b.key_id:
        raise SchemeMismatchError("cipher vectors were produced under different keys")
    if a.dim != b.dim:
        raise DimensionError(f"cipher dims differ: {a.dim} vs {b.dim}")
    if a.scheme_tag == SCHEME_PAILLIER:
        if not isinstance(public_key, PaillierPublicKey) or public_key.n != a.key_id:
            raise SchemeMismatchError("public key does not match the cipher vectors")
        cts = tuple(public_key.add(x, y) for x, y in zip(a.ciphertexts, b.ciphertexts))
    else:
        modulus = a.key_id
        cts = tuple((x + y) % modulus for x, y in zip(a.ciphertexts, b.ciphertexts))
    return CipherVector(cts, a.dim, a.scheme_tag, a.key_id)


def sub_cipher(a: CipherVector, r, public_key, codec: FixedPointCodec,
               rng: np.random.Generator | None = None) -> CipherVector:
    """Homomorphically subtract the plain vector r (adds an encryption of -r)."""
    r = check_vector(r, a.dim, "mask")
    return add_cipher(a, encrypt_vector(-r, public_key, codec, rng), public_key)


@dataclass(frozen=True)
class RingMessage:
    sender: int
    receiver: int
    payload: CipherVector


@dataclass(frozen=True)
class MaskVector:
    """The initiator's Gaussian mask; sigma is guard-checked to stay large."""

    values: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.sigma <= MIN_MASK_SIGMA:
            raise ValueError(
                f"mask sigma must exceed {MIN_MASK_SIGMA}, got {self.sigma}"
            )


@dataclass(frozen=True)
class RingState:
    """One aggregation round: loop order, initiator, and the on-wire messages.

    ``trace`` is exactly what travels the network. ``mask`` and ``mask_sigma``
    are simulation-side audit fields for the adversary harness and plaintext
    oracles; a real deployment never reveals them.
    """

    order: tuple[int, ...]
    initiator: int
    trace: tuple[RingMessage, ...]
    mask_sigma: float
    mask: np.ndarray = field(repr=False)


def ring_aggregate(gradients, keys: AheKeyPair, mask_sigma: float | None,
                   rng: np.random.Generator) -> tuple[np.ndarray, RingState]:
    """Run one round of cyclic secure aggregation over the users' gradients.

    Returns the decrypted sum of all gradients (exact up to fixed-point
    rounding) together with the full ring state. The loop order is the
    ascending-id rotation starting at the uniformly chosen initiator. With
    fewer than three users the protocol is refused: a two-user ring lets the
    initiator read the other user's exact gradient from the aggregate.
    """
    gradients = [check_vector(g, name=f"gradient {i}") for i, g in enumerate(gradients)]
    n = len(gradients)
    if n < 3:
        raise ProtocolError(
            f"cyclic secure aggregation needs at least 3 users, got {n}"
        )
    dim = gradients[0].shape[0]
    for i, g in enumerate(gradients[1:], start=1):
        if g.shape[0] != dim:
            raise DimensionError(f"gradient {i} has dim {g.shape[0]}, expected {dim}")

    codec = keys.codec
    max_abs_grad = max(float(np.max(np.abs(g))) if g.size else 0.0 for g in gradients)
    sigma = float(mask_sigma) if mask_sigma is not None else max(150.0, 100.0 * max_abs_grad)
    initiator = int(rng.integers(n))
    mask = MaskVector(gaussian_vector(dim, 0.0, sigma, rng), sigma)

    # Every summand, mask included, must fit the codec's headroom.
    codec.check_sum_headroom(n + 1, max(max_abs_grad, float(np.max(np.abs(mask.values)))))

    order = tuple((initiator + k) % n for k in range(n))
    trace = []
    cipher = encrypt_vector(gradients[initiator] + mask.values, keys.public_key, codec, rng)
    trace.append(RingMessage(initiator, order[1], cipher))
    for pos, user in enumerate(order[1:], start=1):
        cipher = add_cipher(
            cipher, encrypt_vector(gradients[user], keys.public_key, codec, rng), keys.public_key
        )
        next_user = order[(pos + 1) % n]
        trace.append(RingMessage(user, next_user, cipher))

    unmasked = sub_cipher(cipher, mask.values, keys.public_key, codec, rng)
    total = decrypt_vector(unmasked, keys.private_key, codec)

    state = RingState(
        order=order,
        initiator=initiator,
        trace=tuple(trace),
        mask_sigma=sigma,
        mask=mask.values,
    )
    return total, state
