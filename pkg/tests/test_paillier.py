"""Paillier scheme correctness on raw residues."""

import pytest

from fedring.paillier import generate_keypair
from fedring.numeric import derive_stream


class TestKeygen:
    def test_roundtrip(self, paillier_keys):
        sk = paillier_keys.private_key
        pk = sk.public_key
        rng = derive_stream(0, "pai")
        assert sk.decrypt(pk.encrypt(42, rng)) == 42

    def test_deterministic_given_stream(self):
        a = generate_keypair(1024, derive_stream(9, "pai-keys"))
        b = generate_keypair(1024, derive_stream(9, "pai-keys"))
        assert (a.p, a.q) == (b.p, b.q)

    def test_modulus_size(self, paillier_keys):
        assert paillier_keys.private_key.public_key.n.bit_length() == 1024

    def test_rejects_nonstandard_bits(self):
        with pytest.raises(ValueError):
            generate_keypair(100, derive_stream(0, "pai-keys"))

    def test_serialisation_roundtrip(self, paillier_keys):
        sk = paillier_keys.private_key
        from fedring.paillier import PaillierPrivateKey, PaillierPublicKey

        sk2 = PaillierPrivateKey.from_dict(sk.to_dict())
        pk2 = PaillierPublicKey.from_dict(sk.public_key.to_dict())
        assert sk2.public_key.n == pk2.n == sk.public_key.n


class TestHomomorphism:
    def test_ciphertext_product_decrypts_to_sum(self, paillier_keys):
        sk = paillier_keys.private_key
        pk = sk.public_key
        rng = derive_stream(1, "pai")
        for a, b in [(0, 0), (1, 2), (123456789, 987654321), (pk.n - 5, 3)]:
            c = pk.add(pk.encrypt(a, rng), pk.encrypt(b, rng))
            assert sk.decrypt(c) == (a + b) % pk.n

    def test_semantic_randomisation(self, paillier_keys):
        sk = paillier_keys.private_key
        pk = sk.public_key
        rng = derive_stream(2, "pai")
        c1 = pk.encrypt(7, rng)
        c2 = pk.encrypt(7, rng)
        assert c1 != c2
        assert sk.decrypt(c1) == sk.decrypt(c2) == 7

    def test_negative_residues_via_modulus(self, paillier_keys):
        sk = paillier_keys.private_key
        pk = sk.public_key
        rng = derive_stream(3, "pai")
        minus_five = pk.encrypt((-5) % pk.n, rng)
        assert (sk.decrypt(minus_five) - pk.n) == -5
