import numpy as np
import pytest

import qrouting as qr


@pytest.fixture(scope="session")
def braess():
    return qr.make_braess()


@pytest.fixture(scope="session")
def braess_open():
    return qr.make_braess(include_central=False)


@pytest.fixture(scope="session")
def refined_ensemble_100(braess):
    """100 settled runs at gamma=pi/4 under the refined preset.

    Shared between the dynamics seed-invariance test and the acceptance
    suite; computing it once keeps the session fast.
    """
    return qr.ensemble(qr.refined_config(), braess, 100)


def dense_pipeline_matrix(params, gamma):
    """Independent oracle: the 8x8 pipeline matrix assembled explicitly.

    Built only from matrix primitives (np.kron, matrix products), not from
    the package's state propagation.
    """
    x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    xxx = np.kron(np.kron(x, x), x)
    eye = np.eye(8, dtype=complex)
    j = np.cos(gamma) * eye + 1j * np.sin(gamma) * xxx
    jdag = j.conj().T
    mats = [qr.strategy_unitary(qr.StrategyParams(*row)) for row in params]
    u = np.kron(np.kron(mats[0], mats[1]), mats[2])
    return jdag @ u @ j
