import numpy as np
import pytest

from pcmnet import (AnnealConfig, DeviceConfig, TrainConfig, anneal, build_network,
                    decompose, synthetic_digits, train)

DELTA_WRITE = 0.01
EPSILON_READ = 0.002


@pytest.fixture(scope="session")
def digits():
    full = synthetic_digits(7, 1900)
    return full.subset(slice(0, 1500)), full.subset(slice(1500, 1900))


@pytest.fixture(scope="session")
def trained_net(digits):
    train_set, _ = digits
    return train(build_network(rng_seed=0), train_set, TrainConfig())


@pytest.fixture(scope="session")
def unconstrained_net(digits):
    train_set, _ = digits
    cfg = TrainConfig(lambda_small=0.0, lambda_large=0.0)
    return train(build_network(rng_seed=0), train_set, cfg)


@pytest.fixture(scope="session")
def noise_aware_net(digits):
    train_set, _ = digits
    return train(build_network(rng_seed=0), train_set, TrainConfig(noise_aware=True))


@pytest.fixture(scope="session")
def scheme(trained_net):
    return anneal(trained_net.all_weights(), AnnealConfig(rng_seed=1),
                  DELTA_WRITE, EPSILON_READ)


@pytest.fixture(scope="session")
def dec_layers(trained_net, scheme):
    return [decompose(m, scheme) for m in trained_net.weight_matrices()]


@pytest.fixture()
def dev_cfg():
    return DeviceConfig()


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
