import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctsrl.envs import EnvConfig, make_pool
from ctsrl.networks import EnvDims, NetworkConfig, Networks
from ctsrl.nn import ConfigurationError, NonFiniteError
from ctsrl.rollout import (GroupTag, assign_groups, collect_rollouts, compute_gae, compute_latents,
                           normalize_advantages)

from oracles import gae_double_sum, random_gae_case

SMALL = NetworkConfig(latent_dim=4, encoder_hidden=(8,), policy_hidden=(8,), critic_hidden=(8,))


def small_setup(n_envs=4, seed=0, profile="ctx-pointmass"):
    pool = make_pool(EnvConfig(profile=profile), n_envs, seed)
    dims = EnvDims(pool.obs_dim, pool.priv_dim, pool.history_dim, pool.action_dim)
    return pool, Networks(dims, SMALL, np.random.default_rng(seed))


# -- groups -------------------------------------------------------------------------------
def test_half_split_of_256():
    g = assign_groups(256, 0.5)
    assert np.sum(g == GroupTag.TEACHER) == 128
    assert np.all(g[:128] == GroupTag.TEACHER) and np.all(g[128:] == GroupTag.STUDENT)


@pytest.mark.parametrize("frac", [-0.1, 1.5])
def test_bad_teacher_fraction(frac):
    with pytest.raises(ConfigurationError):
        assign_groups(8, frac)


# -- GAE ----------------------------------------------------------------------------------
def test_gae_hand_recursion():
    adv, ret = compute_gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.0, gamma=1.0, lam=1.0)
    assert np.array_equal(adv, [2.0, 1.0]) and np.array_equal(ret, [2.0, 1.0])


def test_gae_zero_case():
    adv, ret = compute_gae(np.zeros(5), np.zeros(5), np.zeros(5), 0.0)
    assert np.all(adv == 0) and np.all(ret == 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gae_matches_double_sum(seed):
    r, v, d, b, g, lam = random_gae_case(np.random.default_rng(seed))
    adv, _ = compute_gae(r, v, d, b, g, lam)
    assert np.max(np.abs(adv - gae_double_sum(r, v, d, b, g, lam))) <= 1e-10


@given(st.integers(0, 2**31 - 1))
def test_gae_lambda_zero_is_td_error(seed):
    r, v, d, b, g, _ = random_gae_case(np.random.default_rng(seed), 40)
    adv, _ = compute_gae(r, v, d, b, g, 0.0)
    v_next = np.append(v[1:], b)
    assert np.array_equal(adv, r + g * (1 - d) * v_next - v)


@given(st.integers(0, 2**31 - 1))
def test_return_identity(seed):
    r, v, d, b, g, lam = random_gae_case(np.random.default_rng(seed), 50)
    adv, ret = compute_gae(r, v, d, b, g, lam)
    assert np.array_equal(ret, adv + v)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_done_isolates_earlier_advantages(seed):
    rng = np.random.default_rng(seed)
    r, v, d, b, g, lam = random_gae_case(rng, 60)
    T = len(r)
    if T < 3:
        return
    cut = int(rng.integers(0, T - 1))
    d[cut] = 1.0
    before, _ = compute_gae(r, v, d, b, g, lam)
    r2 = r.copy()
    r2[cut + 1:] += 1e9
    v2 = v.copy()
    v2[cut + 1:] -= 1e6
    after, _ = compute_gae(r2, v2, d, b * 1e6, g, lam)
    assert np.array_equal(before[:cut + 1], after[:cut + 1])


def test_gae_vectorised_over_envs():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(30, 5)), rng.normal(size=(30, 5))
    d = (rng.random((30, 5)) < 0.1).astype(float)
    b = rng.normal(size=5)
    adv, _ = compute_gae(r, v, d, b, 0.99, 0.95)
    for j in range(5):
        assert np.max(np.abs(adv[:, j] - gae_double_sum(r[:, j], v[:, j], d[:, j], b[j], 0.99, 0.95))) < 1e-10


def test_gae_shape_mismatch():
    with pytest.raises(ConfigurationError):
        compute_gae(np.zeros(3), np.zeros(4), np.zeros(3), 0.0)


def test_advantages_normalised_per_group():
    rng = np.random.default_rng(1)
    adv = rng.normal(3.0, 2.0, size=(24, 8))
    adv[:, 4:] *= 10
    groups = assign_groups(8)
    out = normalize_advantages(adv, groups)
    for g in (0, 1):
        block = out[:, groups == g]
        assert abs(block.mean()) < 1e-12 and abs(block.std() - 1.0) < 1e-6


# -- collection ---------------------------------------------------------------------------
def test_batch_bookkeeping():
    pool, nets = small_setup(4)
    pool.reset()
    groups = assign_groups(4)
    batch = collect_rollouts(nets, pool, groups, 24, np.random.default_rng(0))
    assert batch.flat("actions").shape == (96, pool.action_dim)
    assert np.array_equal(batch.groups, groups)
    assert batch.row_groups().shape == (96,)
    assert np.allclose(np.linalg.norm(batch.latents, axis=-1), 1.0, atol=1e-6)


def test_latents_come_from_group_encoder():
    pool, nets = small_setup(4)
    ob = pool.reset()
    groups = assign_groups(4)
    z = compute_latents(nets, groups, ob.priv, ob.history)
    assert np.array_equal(z[:2], nets.encode_teacher(ob.priv[:2])[0])
    assert np.array_equal(z[2:], nets.encode_student(ob.history[2:])[0])


def test_deterministic_collection_repeats():
    def run():
        pool, nets = small_setup(4, seed=3)
        pool.reset()
        return collect_rollouts(nets, pool, assign_groups(4), 10, np.random.default_rng(5), deterministic=True)

    a, b = run(), run()
    for name in ("obs", "priv", "actions", "rewards", "values", "latents"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_timeout_bootstrap_and_fall_zero():
    pool, nets = small_setup(2)
    pool.cfg.episode_steps = 5
    pool.reset()
    batch = collect_rollouts(nets, pool, assign_groups(2), 5, np.random.default_rng(0))
    last = batch.timeouts[-1]
    assert np.all(last)
    # the folded-in bootstrap is gamma * V(s_T, z_T); other steps are untouched
    assert np.array_equal(batch.rewards[:-1], batch.raw_rewards[:-1])
    assert np.all(batch.rewards[-1] != batch.raw_rewards[-1])
    fall_rows = batch.falls & ~batch.timeouts
    assert np.array_equal(batch.rewards[fall_rows], batch.raw_rewards[fall_rows])


def test_non_finite_latent_names_env():
    pool, nets = small_setup(4)
    pool.reset()
    nets.params["privileged_encoder"].layers[0][0][:] = np.nan
    with pytest.raises(NonFiniteError, match="env 0"):
        collect_rollouts(nets, pool, assign_groups(4), 2, np.random.default_rng(0))


def test_wrong_group_shape():
    pool, nets = small_setup(4)
    with pytest.raises(ConfigurationError):
        collect_rollouts(nets, pool, assign_groups(3), 2, np.random.default_rng(0))
