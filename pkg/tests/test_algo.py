import math
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctsrl.algo import (AlgoConfig, Mode, Trainer, adaptive_lr, clipped_objective, clipped_objective_weight,
                        deployed_encoder, estimator_loss, ppo_clip_loss, ppo_ratio, reconstruction_loss,
                        value_loss)
from ctsrl.envs import CurriculumConfig, DomainRandomization, EnvConfig, make_pool
from ctsrl.networks import EnvDims, NetworkConfig, Networks
from ctsrl.nn import AdamState, ConfigurationError, adam_step, mlp_backward
from ctsrl.rollout import collect_rollouts, compute_gae

from oracles import clipped_objective_direct

SMALL = NetworkConfig(latent_dim=4, encoder_hidden=(8,), policy_hidden=(8,), critic_hidden=(8,),
                      estimator_hidden=(8,))


def build(mode="concurrent", n_envs=4, seed=0, estimate_dim=0, total=0, **algo_kw):
    pool = make_pool(EnvConfig(), n_envs, seed)
    dims = EnvDims(pool.obs_dim, pool.priv_dim, pool.history_dim, pool.action_dim, estimate_dim)
    nets = Networks(dims, SMALL, np.random.default_rng(seed))
    cfg = AlgoConfig(mode=mode, steps_per_iter=6, **algo_kw)
    return Trainer(cfg, nets, pool, seed, total), nets


def snapshot(nets):
    return {k: [a.copy() for a in p.arrays()] for k, p in nets.params.items()}


def changed(before, nets):
    return {k for k, arrs in before.items()
            if not all(np.array_equal(a, b) for a, b in zip(arrs, nets.params[k].arrays()))}


# -- losses -------------------------------------------------------------------------------
def test_ratio_examples():
    assert ppo_ratio(0.3, 0.3) == 1.0
    assert ppo_ratio(math.log(2.0), 0.0) == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("r,a,expected", [(1.0, 1.0, 1.0), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8)])
def test_clip_examples(r, a, expected):
    assert clipped_objective([r], [a], 0.2)[0] == pytest.approx(expected, abs=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_clipped_objective_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    r = np.exp(rng.normal(0, 0.5, 64))
    a = rng.normal(size=64)
    assert np.max(np.abs(clipped_objective(r, a, 0.2) - clipped_objective_direct(r, a, 0.2))) <= 1e-12


@given(st.floats(0.01, 5.0), st.floats(-5, 5), st.floats(0.01, 0.5))
def test_clip_bound(r, a, eps):
    obj = clipped_objective([r], [a], eps)[0]
    assert obj <= r * a + 1e-15
    assert obj <= min(max(r, 1 - eps), 1 + eps) * a + 1e-15


@given(st.floats(0.05, 3.0), st.floats(-3, 3))
def test_clip_weight_is_derivative_in_log_prob(r, a):
    if abs(abs(r - 1) - 0.2) < 1e-4:
        return  # kink of the clip
    h = 1e-7
    f = lambda lp: clipped_objective([math.exp(lp)], [a], 0.2)[0]
    num = (f(math.log(r) + h) - f(math.log(r) - h)) / (2 * h)
    assert clipped_objective_weight([r], [a], 0.2)[0] == pytest.approx(num, abs=1e-6)


def test_clip_loss_adds_entropy_and_rejects_empty_group():
    assert ppo_clip_loss([1.0], [2.0], 0.2, entropy=[3.0], entropy_coef=0.01) == pytest.approx(2.03)
    with pytest.raises(ConfigurationError):
        ppo_clip_loss([], [], 0.2)


def test_value_loss_examples():
    assert value_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert value_loss([0.0, 0.0], [1.0, -1.0]) == 1.0
    assert value_loss([0.0, 0.0] * 2, [1.0, -1.0] * 2) == 1.0


def test_reconstruction_examples():
    z = np.array([[0.6, 0.8]])
    assert reconstruction_loss(z, z) == 0.0
    assert reconstruction_loss(z, -z) == pytest.approx(4.0, abs=1e-15)


def test_reconstruction_one_row_scalar_oracle():
    trainer, nets = build()
    ob = trainer.pool.reset()
    zs = nets.encode_student(ob.history[:1])[0][0]
    zt = nets.encode_teacher(ob.priv[:1])[0][0]
    hand = sum((float(a) - float(b)) ** 2 for a, b in zip(zs, zt))
    assert abs(reconstruction_loss(zs[None], zt[None]) - hand) <= 1e-12


@given(st.integers(0, 2**31 - 1))
def test_reconstruction_bounded_on_sphere(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 10, 6))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    assert 0.0 <= reconstruction_loss(a, b) <= 4.0 + 1e-12


def test_estimator_loss_examples():
    v = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert estimator_loss(v, v) == 0.0
    assert estimator_loss(np.zeros_like(v), v) == 1.0
    # velocity plus feet heights sum into one loss
    pred = np.zeros((1, 4))
    target = np.array([[1.0, 0.0, 0.5, 0.5]])
    assert estimator_loss(pred, target) == pytest.approx(1.0 + 0.5)
    with pytest.raises(ConfigurationError):
        estimator_loss(None, v)


@pytest.mark.parametrize("lr,kl,expected", [(1e-3, 0.01, 1e-3), (1e-3, 0.03, 1e-3 / 1.5), (1e-2, 0.001, 1e-2),
                                            (1e-3, 0.001, 1.5e-3), (1e-5, 0.5, 1e-5)])
def test_adaptive_lr(lr, kl, expected):
    assert adaptive_lr(lr, kl) == pytest.approx(expected, rel=1e-12)


def test_adaptive_lr_example_value():
    assert round(adaptive_lr(1e-3, 0.03), 7) == 6.667e-4


def test_config_defaults_and_validation():
    c = AlgoConfig()
    assert (c.clip_range, c.entropy_coef, c.gamma, c.gae_lambda, c.desired_kl) == (0.2, 0.01, 0.99, 0.95, 0.01)
    assert (c.ppo_epochs, c.minibatches, c.lr_ppo, c.lr_rec, c.rec_epochs) == (5, 4, 1e-3, 1e-3, 5)
    with pytest.raises(ConfigurationError):
        AlgoConfig(clip_range=0.0).validate()
    with pytest.raises(ConfigurationError):
        AlgoConfig(mode="ours").validate()
    assert Mode.parse("Two-Stage") is Mode.TWO_STAGE


# -- update routing -----------------------------------------------------------------------
def test_reconstruction_only_touches_proprio_encoder():
    trainer, nets = build(ppo_epochs=0, rec_epochs=1)
    before = snapshot(nets)
    trainer.train_iteration()
    assert changed(before, nets) == {"proprio_encoder"}


def test_ppo_only_leaves_proprio_encoder_bitwise():
    trainer, nets = build(rec_epochs=0)
    before = snapshot(nets)
    trainer.train_iteration()
    assert changed(before, nets) == {"policy", "privileged_encoder", "critic"}


def test_critic_through_encoder_flag_changes_encoder_update():
    outs = []
    for flag in (False, True):
        trainer, nets = build(rec_epochs=0, critic_through_encoder=flag)
        trainer.train_iteration()
        outs.append(nets.params["privileged_encoder"].layers[0][0].copy())
    assert not np.array_equal(*outs)


@pytest.mark.parametrize("mode,frozen", [("oracle", {"proprio_encoder"}), ("baseline", {"privileged_encoder"})])
def test_single_group_modes(mode, frozen):
    trainer, nets = build(mode)
    before = snapshot(nets)
    trainer.train_iteration()
    assert changed(before, nets) == set(before) - frozen


def test_estimator_net_trains_estimator_on_velocity():
    trainer, nets = build("estimator_net", estimate_dim=2)
    before = snapshot(nets)
    report = trainer.train_iteration()
    assert "estimator" in changed(before, nets)
    assert report.estimator_loss > 0


def test_estimator_mode_needs_head():
    with pytest.raises(ConfigurationError):
        build("estimator_net")


def test_two_stage_phases():
    trainer, nets = build("two_stage", total=5)
    assert trainer.phase_boundary == 3
    phases = []
    for _ in range(5):
        before = snapshot(nets)
        groups = trainer.groups()
        r = trainer.train_iteration()
        phases.append(r.phase)
        if r.phase == 1:
            assert np.all(groups == 0)
            assert "proprio_encoder" not in changed(before, nets)
        else:
            assert np.all(groups == 1)
            assert changed(before, nets) == {"proprio_encoder"}
            assert r.imitation_loss > 0
    assert phases == [1, 1, 1, 2, 2]


# -- on-policy identity and the end-to-end Adam oracle ------------------------------------
@pytest.mark.parametrize("mode", ["concurrent", "baseline", "oracle"])
def test_first_minibatch_is_on_policy(mode):
    trainer, _ = build(mode)
    for _ in range(3):
        r = trainer.train_iteration()
        assert r.first_ratio_error <= 1e-9
        assert r.first_grad_gap <= 1e-8


def _objective(nets, batch, adv, clip, coef):
    obs, priv = batch.flat("obs"), batch.flat("priv")
    z = nets.encode_teacher(priv)[0]
    mean = nets.policy_mean(obs, z)[0]
    dist = nets.distribution(mean)
    ratio = np.exp(dist.log_prob(batch.flat("actions")) - batch.flat("log_probs"))
    return float(np.mean(clipped_objective(ratio, adv, clip)) + coef * np.mean(dist.entropy()))


def test_single_sample_update_matches_hand_adam_step():
    lr = 1e-4
    trainer, nets = build("oracle", n_envs=1, ppo_epochs=1, minibatches=1, rec_epochs=0, adaptive_lr=False,
                          lr_ppo=lr, max_grad_norm=1e9, normalize_advantages=False)
    trainer.pool.reset()
    batch = collect_rollouts(nets, trainer.pool, trainer.groups(), 1, np.random.default_rng(0))
    adv, ret = compute_gae(batch.rewards, batch.values, batch.dones, batch.bootstrap_value, 0.99, 0.95)
    adv_f, ret_f = adv.reshape(-1), ret.reshape(-1)
    ref = nets.copy()
    trainer.update(batch)

    # gradient of each loss by central differences on the untouched copy, then one Adam step by hand
    h = 1e-6
    def loss_for(name):
        if name == "critic":
            return lambda: value_loss(ref.value(batch.flat("priv"), batch.flat("latents"))[0], ret_f)
        return lambda: -_objective(ref, batch, adv_f, 0.2, 0.01)

    worst, checked = 0.0, 0
    for name in ("policy", "privileged_encoder", "critic"):
        f = loss_for(name)
        for p, new in zip(ref.params[name].arrays(), nets.params[name].arrays()):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = f()
                p[idx] = old - h
                down = f()
                p[idx] = old
                g = (up - down) / (2 * h)
                expected = old - lr * g / (abs(g) + 1e-8)
                checked += abs(g) > 1e-4
                if abs(g) > 1e-4:  # tiny gradients make the Adam direction ill-conditioned for FD
                    worst = max(worst, abs(new[idx] - expected))
    assert checked > 100
    assert worst <= 1e-10


# -- teacher/student agreement ------------------------------------------------------------
def test_matched_encoders_give_matching_action_distributions():
    cfg = EnvConfig(obs_noise=0.0, randomization=DomainRandomization(enabled=False),
                    curriculum=CurriculumConfig(initial_lin_range=0.0, initial_yaw_range=0.0))
    pool = make_pool(cfg, 8, 0)
    ob = pool.reset()
    dims = EnvDims(pool.obs_dim, pool.priv_dim, pool.history_dim, pool.action_dim)
    nets = Networks(dims, SMALL, np.random.default_rng(0))
    opt = AdamState.for_params(nets.params["proprio_encoder"])
    for _ in range(3000):
        zs, cache = nets.encode_student(ob.history)
        zt = nets.encode_teacher(ob.priv)[0]
        g = mlp_backward(cache, 2.0 * (zs - zt) / len(zs))[0]
        adam_step(nets.params["proprio_encoder"], g, opt, 1e-3)
    zs, zt = nets.encode_student(ob.history)[0], nets.encode_teacher(ob.priv)[0]
    d_t = nets.distribution(nets.policy_mean(ob.obs, zt)[0])
    d_s = nets.distribution(nets.policy_mean(ob.obs, zs)[0])
    assert float(np.max(d_t.kl_to(d_s))) < 1e-6


def test_deployed_encoder():
    assert deployed_encoder("oracle") == "privileged_encoder"
    for m in ("concurrent", "two_stage", "baseline", "estimator_net"):
        assert deployed_encoder(m) == "proprio_encoder"
