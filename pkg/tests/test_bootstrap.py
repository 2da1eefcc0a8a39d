import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from windemos.bootstrap import BootstrapSettings, block_lengths, skill_ci, stationary_indices, stationary_resample
from windemos.exceptions import InputError, UndefinedSkillError


def _observed_block_lengths(idx):
    n = idx.max() + 1
    breaks = np.flatnonzero(idx[1:] != (idx[:-1] + 1) % n) + 1
    flags = np.zeros(idx.size, bool)
    flags[0] = True
    flags[breaks] = True
    return block_lengths(flags)


class TestResample:
    def test_length_one(self):
        assert stationary_resample(1, BootstrapSettings(), 0).tolist() == [0]

    def test_unit_block_length_draws_every_index_fresh(self):
        n = 50
        idx = stationary_indices(n, 1.0, np.random.default_rng(3))
        starts = np.random.default_rng(3).integers(0, n, size=(n,))
        np.testing.assert_array_equal(idx, starts)

    def test_mean_block_length(self):
        n, length = 100_000, 6.0
        idx = stationary_indices(n, length, np.random.default_rng(4))
        assert _observed_block_lengths(idx).mean() == pytest.approx(length, rel=0.02)

    def test_block_lengths_geometric(self):
        lengths = _observed_block_lengths(stationary_indices(200_000, 4.0, np.random.default_rng(5)))
        # P(L = 1) = 1/4 and P(L = 2) = 3/16 for the geometric law with mean 4
        assert np.mean(lengths == 1) == pytest.approx(0.25, abs=0.01)
        assert np.mean(lengths == 2) == pytest.approx(3 / 16, abs=0.01)

    @given(st.integers(1, 300), st.floats(1.0, 50.0), st.integers(0, 2**32 - 1))
    def test_indices_valid(self, n, length, seed):
        idx = stationary_indices(n, length, seed, size=3)
        assert idx.shape == (3, n)
        assert idx.min() >= 0 and idx.max() < n

    def test_deterministic(self):
        a = stationary_indices(40, 3.0, 9, size=5)
        b = stationary_indices(40, 3.0, 9, size=5)
        np.testing.assert_array_equal(a, b)

    def test_default_block_length_is_cube_root(self):
        assert BootstrapSettings().block_length(232) == pytest.approx(232 ** (1 / 3))

    @pytest.mark.parametrize("kwargs", [{"replicates": 0}, {"confidence": 1.0}, {"mean_block_length": 0.5}])
    def test_settings_validated(self, kwargs):
        with pytest.raises(InputError):
            BootstrapSettings(**kwargs)


class TestSkillCi:
    def test_identical_series(self):
        x = np.random.default_rng(1).gamma(2, 1, 50)
        s = skill_ci(x, x, BootstrapSettings(replicates=300))
        assert s.skill == 0.0 and s.ci_low == 0.0 and s.ci_high == 0.0

    def test_constant_series(self):
        s = skill_ci(np.ones(30), np.full(30, 2.0), BootstrapSettings(replicates=300))
        assert s.skill == 0.5 and s.ci_high - s.ci_low == 0.0

    def test_zero_reference(self):
        with pytest.raises(UndefinedSkillError):
            skill_ci(np.ones(5), np.zeros(5))

    def test_mismatched(self):
        with pytest.raises(InputError):
            skill_ci(np.ones(5), np.ones(6))

    def test_symmetric_and_ordered(self):
        rng = np.random.default_rng(2)
        s = skill_ci(rng.normal(0.9, 0.2, 100), rng.normal(1.0, 0.2, 100), BootstrapSettings(replicates=500, seed=3))
        assert s.ci_low <= s.skill <= s.ci_high
        assert s.skill - s.ci_low == pytest.approx(s.ci_high - s.skill, rel=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(0.9, 0.2, 80), rng.normal(1.0, 0.2, 80)
        s1 = skill_ci(a, b, BootstrapSettings(replicates=200, seed=7))
        s2 = skill_ci(a, b, BootstrapSettings(replicates=200, seed=7))
        assert s1 == s2

    def test_joint_resampling(self):
        # a perfectly paired series has zero replicate spread only if indices are shared
        base = np.random.default_rng(5).gamma(2, 1, 60)
        s = skill_ci(0.8 * base, base, BootstrapSettings(replicates=400, seed=1))
        assert s.skill == pytest.approx(0.2) and s.ci_high - s.ci_low < 1e-12

    def test_root_skill(self):
        s = skill_ci(np.full(10, 4.0), np.full(10, 16.0), BootstrapSettings(replicates=50), root=True)
        assert s.skill == pytest.approx(0.5)
