import pytest

from bgspot.gsn import train_network
from bgspot.synth import gesture_examples
from bgspot.templates import ORIGINAL_GESTURES, PROPOSED_GESTURES, TEMPLATES

TRAIN_SEED = 11


def _train(gestures, n=80):
    examples = {k: gesture_examples(k[0], k[1], n=n, seed=TRAIN_SEED) for k in TEMPLATES if k[0] in gestures}
    return train_network(examples, seed=0)


@pytest.fixture(scope="session")
def original_net():
    return _train(ORIGINAL_GESTURES)


@pytest.fixture(scope="session")
def proposed_net():
    return _train(PROPOSED_GESTURES)


@pytest.fixture(scope="session")
def small_net():
    """Cheap 8-gesture network for plumbing tests."""
    return _train(ORIGINAL_GESTURES + PROPOSED_GESTURES, n=20)
