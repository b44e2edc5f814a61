"""fedring: personalized federated learning with cyclic homomorphically-encrypted
secure aggregation, plus a gradient-inversion attack harness."""

from .csahe import (
    AheKeyPair,
    CipherVector,
    RingState,
    add_cipher,
    decrypt_vector,
    encrypt_vector,
    keygen,
    null_keypair,
    ring_aggregate,
    sub_cipher,
)
from .datasets import HeterogeneityProfile, UserSplit, load_shards, make_users
from .engine import (
    ExperimentConfig,
    TrainingHistory,
    adapt,
    fedavg_local_update,
    perfedavg_local_update,
    run_training,
    server_aggregate,
)
from .attacks import (
    AttackResult,
    AttackTarget,
    extract_label,
    hbc_view,
    idlg_attack,
    intercept,
)
from .metrics import ConfusionCounts, accuracy, dice, recall
from .models import DatasetShard, ModelSpec, evaluate, grad, hvp, loss
from .numeric import FixedPointCodec, derive_stream, gaussian_vector

__version__ = "0.1.0"
