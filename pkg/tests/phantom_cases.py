"""Small prepared phantom sets shared by the training and evaluation tests."""
import numpy as np

from cases.phantoms import PhantomConfig, synthesize_phantom
from cases.preprocessing import compute_normalization_stats, prepare_case
from network.model import NetworkConfig

TINY_PHANTOMS = PhantomConfig(edge=16, n_cases=12, radius_range=(2.0, 4.0), seed=11)
TINY_NETWORK = NetworkConfig(input_size=16, channels=(2, 3, 3, 4), n_bins=5, seed=3)


def prepared_phantoms(config=TINY_PHANTOMS, n_val=4):
    """Synthesize, normalize with the training part's statistics and split off the last n_val cases."""
    cases = synthesize_phantom(config)
    train_raw, val_raw = cases[: len(cases) - n_val], cases[len(cases) - n_val :]
    stats = compute_normalization_stats(train_raw)
    train = [prepare_case(case, stats) for case in train_raw]
    val = [prepare_case(case, stats) for case in val_raw]
    return train, val


def assert_states_equal(first, second):
    assert list(first) == list(second)
    for name in first:
        np.testing.assert_array_equal(first[name], second[name], err_msg=name)
