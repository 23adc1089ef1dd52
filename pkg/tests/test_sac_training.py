import struct

import numpy as np
import pytest

from spastic_exo.environment import EnvConfig, OBS_DIM
from spastic_exo.sac import CheckpointError, SacAgent, SacHyperparams, load_actor, train
from spastic_exo.sac.buffer import Batch
from spastic_exo.sac.checkpoint import MAGIC, decode, encode, load, save_agent
from spastic_exo.sac.policy import sample_action
from spastic_exo.sac.train import TrainingInterrupted, directory_sink, read_curve_csv, write_curve_csv

from test_sac_math import fd_check

TINY = SacHyperparams(batch_size=16, buffer_capacity=64, hidden=(5, 5), dtype="float64")


def _batch(n, obs_dim, seed):
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, obs_dim)), rng.uniform(-0.9, 0.9, n), rng.normal(size=n),
                 rng.normal(size=(n, obs_dim)), np.zeros(n))


def _captured_update(agent, batch, seed):
    grads = {}
    for name in ("q1", "q2", "actor", "alpha"):
        opt = getattr(agent, f"{name}_opt")
        opt.step = lambda g, name=name: grads.setdefault(name, [x.copy() for x in g])
    agent.update(batch, np.random.default_rng(seed))
    return grads


def test_update_gradients_match_finite_differences():
    agent = SacAgent(TINY, obs_dim=4, seed=3)
    batch = _batch(16, 4, 0)
    y = agent.targets(batch, np.random.default_rng(7))
    grads = _captured_update(agent, batch, 7)
    qin = np.concatenate([batch.obs, batch.action[:, None]], axis=1)

    for name in ("q1", "q2"):
        net = getattr(agent, name)
        fd_check(lambda: 0.5 * float(np.mean((net(qin)[:, 0] - y) ** 2)), net.params, grads[name], h=1e-6)

    alpha = agent.alpha

    def actor_loss():
        rng = np.random.default_rng(7)
        rng.standard_normal(16)  # the draw used for the targets
        s = sample_action(agent.actor, batch.obs, rng)
        q = np.concatenate([batch.obs, s.action[:, None]], axis=1)
        return float(np.mean(alpha * s.log_prob - np.minimum(agent.q1(q), agent.q2(q))[:, 0]))

    fd_check(actor_loss, agent.actor.params, grads["actor"], h=1e-6)

    rng = np.random.default_rng(7)
    rng.standard_normal(16)
    logp = sample_action(agent.actor, batch.obs, rng).log_prob
    assert grads["alpha"][0][0] == pytest.approx(-np.mean(logp - 1.0), rel=1e-12)


def test_update_is_deterministic():
    a = SacAgent(TINY, obs_dim=4, seed=1)
    b = SacAgent(TINY, obs_dim=4, seed=1)
    for k in range(5):
        a.update(_batch(16, 4, k), np.random.default_rng(k))
        b.update(_batch(16, 4, k), np.random.default_rng(k))
    for na, nb in zip(a.networks().values(), b.networks().values()):
        assert all(np.array_equal(x, y) for x, y in zip(na.params, nb.params))
    assert a.alpha == b.alpha


def test_hyperparam_validation():
    for bad in ({"tau": 0.0}, {"gamma": 1.0}, {"lr": 0.0}, {"batch_size": 10, "buffer_capacity": 5},
                {"dtype": "float16"}, {"init_alpha": 0.0}):
        with pytest.raises(ValueError):
            SacHyperparams(**bad)


# --- checkpoints -----------------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    agent = SacAgent(SacHyperparams(), seed=0)
    path = save_agent(tmp_path / "a.ckpt", agent)
    nets, scalars = load(path)
    assert set(nets) == {"actor", "q1", "q2", "q1_target", "q2_target"}
    assert scalars == {"log_alpha": 0.0}
    for name, net in agent.networks().items():
        assert nets[name].spec == net.spec
        assert all(np.array_equal(x.astype(np.float32), y) for x, y in zip(net.params, nets[name].params))
    actor = load_actor(save_agent(tmp_path / "b.ckpt", agent, actor_only=True))
    obs = np.random.default_rng(0).normal(size=(3, OBS_DIM))
    assert np.allclose(actor(obs), agent.actor(obs), atol=1e-5)
    assert path.read_bytes()[:8] == MAGIC


def test_checkpoint_corruption_reports_offsets(tmp_path):
    agent = SacAgent(SacHyperparams(hidden=(3,)), obs_dim=2, seed=0)
    data = encode({"actor": agent.actor}, {"x": 1.0})
    with pytest.raises(CheckpointError) as err:
        decode(b"XXXXXXXX" + data[8:])
    assert err.value.offset == 0
    with pytest.raises(CheckpointError) as err:
        decode(data[:8] + struct.pack("<I", 99) + data[12:])
    assert err.value.offset == 8
    with pytest.raises(CheckpointError) as err:
        decode(data[:8] + data[8:12] + struct.pack("<I", 99) + data[16:])
    assert err.value.offset == 12
    with pytest.raises(CheckpointError, match="expected"):
        decode(data[:-4])
    with pytest.raises(CheckpointError, match="expected"):
        decode(data + b"\0\0\0\0")
    with pytest.raises(CheckpointError, match="truncated"):
        decode(data[:20])
    nan = bytearray(data)
    nan[-8:-4] = struct.pack("<f", float("nan"))
    with pytest.raises(CheckpointError, match="non-finite") as err:
        decode(bytes(nan))
    assert err.value.offset == len(data) - 8
    with pytest.raises(CheckpointError):
        load(tmp_path / "missing.ckpt")
    (tmp_path / "q.ckpt").write_bytes(encode({"q1": agent.q1}))
    with pytest.raises(CheckpointError, match="no 'actor'"):
        load_actor(tmp_path / "q.ckpt")


# --- training loop ----------------------------------------------------------------------------------

SHORT = EnvConfig(episode_duration=0.5, levels=(0,))


def test_train_zero_steps(tmp_path):
    res = train(SacHyperparams(total_steps=0), SHORT, seed=0, sink=directory_sink(tmp_path))
    assert res.curve == [] and res.steps_done == 0
    fresh = SacAgent(SacHyperparams(), seed=np.random.default_rng([0, 2]))
    assert all(np.array_equal(a, b) for a, b in zip(res.best_actor.params, fresh.actor.params))
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "final.ckpt").exists()


def _small_run(seed, sink=None):
    hyper = SacHyperparams(total_steps=300, warmup_steps=100, batch_size=32, buffer_capacity=1000,
                           eval_every=100, eval_episodes=2, hidden=(16, 16))
    return train(hyper, SHORT, seed=seed, sink=sink)


def test_train_bit_exact_determinism(tmp_path):
    a, b = _small_run(4), _small_run(4)
    text = lambda res, name: write_curve_csv(res.curve, tmp_path / name).read_bytes()
    assert len(a.curve) == 3 and text(a, "a.csv") == text(b, "b.csv")
    assert all(np.array_equal(x, y) for x, y in zip(a.agent.actor.params, b.agent.actor.params))
    assert text(_small_run(5), "c.csv") != text(a, "a.csv")
    back = read_curve_csv(tmp_path / "a.csv")
    assert [r.step for r in back] == [100, 200, 300]
    assert [r.eval_return_mean for r in back] == [r.eval_return_mean for r in a.curve]


def test_train_interrupt_persists_state(tmp_path):
    calls = []

    def progress(row):
        calls.append(row)
        raise KeyboardInterrupt

    hyper = SacHyperparams(total_steps=300, warmup_steps=50, batch_size=16, buffer_capacity=1000,
                           eval_every=100, eval_episodes=1, hidden=(8,))
    with pytest.raises(TrainingInterrupted) as err:
        train(hyper, SHORT, seed=0, sink=directory_sink(tmp_path), progress=progress)
    assert err.value.result.steps_done == 100 and len(calls) == 1
    nets, scalars = load(tmp_path / "interrupted.ckpt")
    assert "q1_target" in nets and "log_alpha" in scalars
