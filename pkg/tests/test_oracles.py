import numpy as np
import pytest

from oracles import film_boundary_layer_gap, harmonic_mean_fd, laminate_hull


@pytest.mark.parametrize("t, expected", [(0.0, 0.0), (0.5, 0.0), (-0.9, 0.0), (2.0, 9.0), (1.5, 1.5625)])
def test_laminate_hull_oracle(t, expected):
    assert laminate_hull(t) == pytest.approx(expected, abs=1e-12)


def test_harmonic_mean_fd_oracle():
    assert harmonic_mean_fd(1.0, 4.0, 0.5) == pytest.approx(1.6, rel=1e-12)
    assert harmonic_mean_fd(2.0, 3.0, 0.25, n=400) == pytest.approx(1.0 / (0.25 / 2 + 0.75 / 3), rel=1e-12)


def test_boundary_layer_series():
    # 7 zeta(3) = sum 1/(k+1/2)^3
    assert film_boundary_layer_gap(1.0, 200000) == pytest.approx(16 / np.pi ** 3 * 7 * 1.2020569031595942, rel=1e-6)
