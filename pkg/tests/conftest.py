import numpy as np
import pytest

from constelsched import GeneratorConfig, Instance, generate
from constelsched.instance import VariableLayout


def micro_instance(theta, omega, t, s, *, p=None, d=None, q=None, q_max=None, data_rate=100.0,
                   alpha=1.0, beta=1.0, gamma=10.0, horizon=24.0) -> Instance:
    """Hand-written instance with slack memory and windows unless told otherwise."""
    theta = np.asarray(theta)
    n, m = theta.shape
    if p is None:
        p = [[[0.0] * int(theta[i, j]) for j in range(m)] for i in range(n)]
    if d is None:
        d = [[1.0] * int(omega[i]) for i in range(n)]
    if q is None:
        q = np.full((n, m), 10.0)
    if q_max is None:
        q_max = np.full(n, 100.0)
    return Instance(n=n, m=m, theta=theta, omega=omega, t=t, s=s, p=p, d=d, q=q, q_max=q_max,
                    data_rate=data_rate, alpha=alpha, beta=beta, gamma=gamma, horizon=horizon)


def tiny_instance(seed: int, max_vars: int = 16) -> Instance:
    """Random instance with n in {1, 2}, m in {1, 2, 3}, counts <= 2 and at most max_vars variables."""
    rng = np.random.default_rng(seed)
    while True:
        cfg = GeneratorConfig(n=int(rng.integers(1, 3)), m=int(rng.integers(1, 4)), theta_max=2, omega_max=2,
                              days=1, prep_max=3.0, window=(0.05, 0.3), memory_need=(50.0, 500.0),
                              memory_capacity=(300.0, 900.0), data_rate=1000.0)
        inst = generate(int(rng.integers(1 << 31)), cfg)
        if VariableLayout.from_instance(inst).nz <= max_vars:
            return inst


@pytest.fixture
def single():
    """One satellite, one target: x = y = 1 costs 1 + 2 - 10 = -7."""
    return micro_instance([[1]], [1], [[[1.0]]], [[[2.0]]])


@pytest.fixture
def contested():
    """Two satellites competing for one target; satellite 0 is worth -0.5, satellite 1 only -0.05."""
    return micro_instance([[1], [1]], [1, 1], [[[1.0]], [[2.0]]], [[[3.0]], [[5.6]]],
                          alpha=0.125, beta=0.125, gamma=1.0)
