import pytest

from fedring.csahe import keygen
from fedring.numeric import DEFAULT_CODEC, derive_stream


@pytest.fixture(scope="session")
def paillier_keys():
    """One 1024-bit keypair shared across tests that only need a valid key."""
    return keygen(1024, DEFAULT_CODEC, derive_stream(2024, "tests", "keys"))
