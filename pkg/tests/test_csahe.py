"""Cipher-vector layer and the cyclic secure-aggregation protocol."""

import numpy as np
import pytest
from scipy import stats

from fedring.csahe import (
    CipherVector,
    add_cipher,
    decrypt_vector,
    encrypt_vector,
    null_keypair,
    ring_aggregate,
    sub_cipher,
)
from fedring.errors import DecryptError, DimensionError, ProtocolError, SchemeMismatchError
from fedring.numeric import DEFAULT_CODEC, derive_stream

TOL = 2.0**-32
NULL_KEYS = null_keypair(DEFAULT_CODEC)


class TestCipherVectors:
    def test_roundtrip(self, paillier_keys):
        rng = derive_stream(0, "cv")
        v = rng.uniform(-10, 10, 32)
        cv = encrypt_vector(v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(cv, paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - v)) <= TOL

    def test_same_vector_twice_differs_but_decrypts_equal(self, paillier_keys):
        rng = derive_stream(1, "cv")
        v = rng.uniform(-5, 5, 8)
        c1 = encrypt_vector(v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        c2 = encrypt_vector(v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        assert c1.ciphertexts != c2.ciphertexts
        assert np.allclose(
            decrypt_vector(c1, paillier_keys.private_key, DEFAULT_CODEC),
            decrypt_vector(c2, paillier_keys.private_key, DEFAULT_CODEC),
        )

    def test_encode_overflow_propagates(self, paillier_keys):
        rng = derive_stream(2, "cv")
        with pytest.raises(OverflowError):
            encrypt_vector([2.0**40], paillier_keys.public_key, DEFAULT_CODEC, rng)

    def test_null_scheme_roundtrip(self):
        v = np.array([1.25, -2.5, 0.0])
        cv = encrypt_vector(v, NULL_KEYS.public_key, DEFAULT_CODEC)
        assert np.allclose(decrypt_vector(cv, NULL_KEYS.private_key, DEFAULT_CODEC), v)

    def test_serialisation_roundtrip(self, paillier_keys):
        rng = derive_stream(3, "cv")
        cv = encrypt_vector(rng.uniform(-3, 3, 5), paillier_keys.public_key, DEFAULT_CODEC, rng)
        blob = cv.to_bytes()
        back = CipherVector.from_bytes(blob, cv.scheme_tag, cv.key_id)
        assert back == cv


class TestAddCipher:
    def test_thousand_random_pairs(self, paillier_keys):
        # One dim-1000 vector addition = 10^3 random scalar pairs at once.
        rng = derive_stream(4, "add")
        a = rng.uniform(-100, 100, 1000)
        b = rng.uniform(-100, 100, 1000)
        ca = encrypt_vector(a, paillier_keys.public_key, DEFAULT_CODEC, rng)
        cb = encrypt_vector(b, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(add_cipher(ca, cb, paillier_keys.public_key),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - (a + b))) <= 2 * TOL

    def test_additive_identity(self, paillier_keys):
        rng = derive_stream(5, "add")
        v = rng.uniform(-5, 5, 6)
        cv = encrypt_vector(v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        zero = encrypt_vector(np.zeros(6), paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(add_cipher(cv, zero, paillier_keys.public_key),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - v)) <= 2 * TOL

    def test_additive_inverse(self, paillier_keys):
        rng = derive_stream(6, "add")
        v = rng.uniform(-5, 5, 6)
        cv = encrypt_vector(v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        cneg = encrypt_vector(-v, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(add_cipher(cv, cneg, paillier_keys.public_key),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out)) <= 2 * TOL

    def test_scheme_mismatch_rejected(self, paillier_keys):
        rng = derive_stream(7, "add")
        cp = encrypt_vector([1.0], paillier_keys.public_key, DEFAULT_CODEC, rng)
        cn = encrypt_vector([1.0], NULL_KEYS.public_key, DEFAULT_CODEC)
        with pytest.raises(SchemeMismatchError):
            add_cipher(cp, cn, paillier_keys.public_key)

    def test_dimension_mismatch_rejected(self, paillier_keys):
        rng = derive_stream(8, "add")
        c1 = encrypt_vector([1.0], paillier_keys.public_key, DEFAULT_CODEC, rng)
        c2 = encrypt_vector([1.0, 2.0], paillier_keys.public_key, DEFAULT_CODEC, rng)
        with pytest.raises(DimensionError):
            add_cipher(c1, c2, paillier_keys.public_key)

    def test_wrong_key_decrypt_rejected(self, paillier_keys):
        from fedring.csahe import keygen

        rng = derive_stream(9, "add")
        other = keygen(1024, DEFAULT_CODEC, derive_stream(10, "other-keys"))
        cv = encrypt_vector([1.0], paillier_keys.public_key, DEFAULT_CODEC, rng)
        with pytest.raises(DecryptError):
            decrypt_vector(cv, other.private_key, DEFAULT_CODEC)


class TestSubCipher:
    def test_mask_cancellation_identity(self, paillier_keys):
        rng = derive_stream(11, "sub")
        x = rng.uniform(-5, 5, 16)
        mask = rng.normal(0, 150.0, 16)
        cv = encrypt_vector(x + mask, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(sub_cipher(cv, mask, paillier_keys.public_key, DEFAULT_CODEC, rng),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - x)) <= 2 * TOL

    def test_subtract_zero(self, paillier_keys):
        rng = derive_stream(12, "sub")
        x = rng.uniform(-5, 5, 4)
        cv = encrypt_vector(x, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(sub_cipher(cv, np.zeros(4), paillier_keys.public_key, DEFAULT_CODEC, rng),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - x)) <= 2 * TOL

    def test_sigma_150_cancellation_sweep(self, paillier_keys):
        rng = derive_stream(13, "sub")
        x = rng.uniform(-10, 10, 64)
        mask = rng.normal(0, 150.0, 64)
        cv = encrypt_vector(x + mask, paillier_keys.public_key, DEFAULT_CODEC, rng)
        out = decrypt_vector(sub_cipher(cv, mask, paillier_keys.public_key, DEFAULT_CODEC, rng),
                             paillier_keys.private_key, DEFAULT_CODEC)
        assert np.max(np.abs(out - x)) <= 2 * TOL


class TestRingAggregate:
    def test_forced_scalar_sum(self, paillier_keys):
        rng = derive_stream(14, "ring")
        grads = [np.array([1.0]), np.array([2.0]), np.array([3.0])]
        total, ring = ring_aggregate(grads, paillier_keys, 150.0, rng)
        assert abs(total[0] - 6.0) <= 3 * TOL
        assert len(ring.trace) == 3

    def test_matches_plain_sum_oracle(self, paillier_keys):
        rng = derive_stream(15, "ring")
        grads = [rng.uniform(-10, 10, 64) for _ in range(5)]
        total, _ = ring_aggregate(grads, paillier_keys, None, rng)
        oracle = np.sum(np.stack(grads), axis=0)
        assert np.max(np.abs(total - oracle)) <= 5 * 2.0**-31

    def test_two_users_rejected(self, paillier_keys):
        rng = derive_stream(16, "ring")
        with pytest.raises(ProtocolError):
            ring_aggregate([np.ones(2), np.ones(2)], paillier_keys, None, rng)

    def test_dimension_mismatch_rejected(self, paillier_keys):
        rng = derive_stream(17, "ring")
        with pytest.raises(DimensionError):
            ring_aggregate([np.ones(2), np.ones(3), np.ones(2)], paillier_keys, None, rng)

    def test_trace_structure(self, paillier_keys):
        rng = derive_stream(18, "ring")
        n = 5
        grads = [rng.uniform(-1, 1, 3) for _ in range(n)]
        _, ring = ring_aggregate(grads, paillier_keys, None, rng)
        assert len(ring.trace) == n
        assert ring.order[0] == ring.initiator
        assert sorted(ring.order) == list(range(n))
        senders = [m.sender for m in ring.trace]
        receivers = [m.receiver for m in ring.trace]
        # Every non-initiator sends exactly once and receives exactly once;
        # the loop opens and closes at the initiator.
        assert senders[0] == ring.initiator
        assert receivers[-1] == ring.initiator
        non_initiators = [u for u in range(n) if u != ring.initiator]
        assert sorted(senders[1:]) == sorted(non_initiators)
        assert sorted(receivers[:-1]) == sorted(non_initiators)

    def test_intermediate_hops_are_masked_partial_sums(self, paillier_keys):
        # Plaintext protocol oracle: hop h decrypts to the initiator's
        # gradient plus the mask plus the first h non-initiator gradients.
        rng = derive_stream(19, "ring")
        grads = [rng.uniform(-2, 2, 4) for _ in range(4)]
        _, ring = ring_aggregate(grads, paillier_keys, 150.0, rng)
        expected = grads[ring.initiator] + ring.mask
        for hop, message in enumerate(ring.trace):
            plain = decrypt_vector(message.payload, paillier_keys.private_key, DEFAULT_CODEC)
            if hop > 0:
                expected = expected + grads[ring.order[hop]]
            assert np.max(np.abs(plain - expected)) <= (hop + 2) * TOL

    def test_null_and_paillier_agree(self, paillier_keys):
        grads = [derive_stream(20, "ring", str(i)).uniform(-5, 5, 16) for i in range(3)]
        total_p, _ = ring_aggregate(grads, paillier_keys, 150.0, derive_stream(21, "p"))
        total_n, _ = ring_aggregate(grads, NULL_KEYS, 150.0, derive_stream(21, "p"))
        assert np.max(np.abs(total_p - total_n)) <= 2 * TOL

    def test_auto_sigma_scales_with_gradients(self):
        rng = derive_stream(22, "ring")
        grads = [rng.uniform(-40, 40, 4) for _ in range(3)]
        _, ring = ring_aggregate(grads, NULL_KEYS, None, rng)
        peak = max(float(np.max(np.abs(g))) for g in grads)
        assert ring.mask_sigma == pytest.approx(max(150.0, 100.0 * peak))

    def test_explicit_small_sigma_rejected(self):
        rng = derive_stream(23, "ring")
        grads = [np.ones(2)] * 3
        with pytest.raises(ValueError):
            ring_aggregate(grads, NULL_KEYS, 50.0, rng)


class TestHidingProperties:
    def test_no_plaintext_encoding_on_the_wire(self, paillier_keys):
        # Type-I view: across 100 runs, no gradient coordinate's fixed-point
        # encoding appears as a byte substring of any transmitted message.
        codec = DEFAULT_CODEC
        rng = derive_stream(24, "hiding")
        for _ in range(100):
            grads = [rng.uniform(-10, 10, 2) for _ in range(3)]
            _, ring = ring_aggregate(grads, paillier_keys, None, rng)
            patterns = [
                codec.encode(float(value)).to_bytes(8, "big")
                for g in grads
                for value in g
            ]
            for message in ring.trace:
                wire = message.payload.to_bytes()
                for pattern in patterns:
                    assert pattern not in wire

    def test_intermediate_correlation_proxy(self):
        # Type-II view: over 10^3 rounds with sigma >= 100 * max|g|, the
        # correlation between a user's gradient coordinate and the decrypted
        # intermediate value stays negligible.
        rng = derive_stream(25, "hiding")
        own_coord = []
        seen_value = []
        for _ in range(1000):
            grads = [rng.uniform(-1, 1, 1) for _ in range(3)]
            _, ring = ring_aggregate(grads, NULL_KEYS, 150.0, rng)
            first_non_initiator = ring.order[1]
            plain = decrypt_vector(ring.trace[1].payload, NULL_KEYS.private_key, DEFAULT_CODEC)
            own_coord.append(float(grads[first_non_initiator][0]))
            seen_value.append(float(plain[0]))
        corr = np.corrcoef(own_coord, seen_value)[0, 1]
        assert abs(corr) <= 0.05

    def test_initiator_uniform_over_users(self):
        counts = np.zeros(5)
        grads = [np.ones(1) * i for i in range(5)]
        for seed in range(1000):
            _, ring = ring_aggregate(grads, NULL_KEYS, 150.0, derive_stream(seed, "uniform"))
            counts[ring.initiator] += 1
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01
