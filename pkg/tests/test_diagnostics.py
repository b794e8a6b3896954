import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import BASELINES, ATARI_MEANS, exact_hns, quad_kl_1d
from sanex import diagnostics as diag
from sanex.agent import MetricsRow
from sanex.envs import HIGH_RISK, LOW_RISK, cliff_bridge
from sanex.nncore import NetSpec, QNetworkParams, build_qnetwork
from sanex.noisy import sane_sigma
from sanex.numkit import AdamState, ContractError, Rng, standard_normal


def test_kl_identical_is_zero():
    assert diag.gaussian_kl_diag(np.zeros(5), np.ones(5)) == 0.0


def test_kl_shifted_mean():
    assert diag.gaussian_kl_diag([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.5, abs=1e-12)


def test_kl_scaled_variance_vs_quadrature():
    value = diag.gaussian_kl_diag([0.0, 0.0], [2.0, 2.0])
    assert value == pytest.approx(1.0 - math.log(2.0), abs=1e-12)
    assert value == pytest.approx(2 * quad_kl_1d(2.0), abs=1e-10)


def test_kl_rejects_bad_variance():
    with pytest.raises(ContractError):
        diag.gaussian_kl_diag([0.0], [0.0])
    with pytest.raises(ContractError):
        diag.gaussian_kl_diag([0.0, 1.0], [1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(1e-6, 1e3)), min_size=1, max_size=8))
def test_kl_nonnegative(pairs):
    mu, var = zip(*pairs)
    assert diag.gaussian_kl_diag(mu, var) >= -1e-12


def test_kl_nonnegative_bulk():
    rng = Rng(0)
    mu = standard_normal(rng, 10_000 * 3).reshape(10_000, 3)
    var = np.exp(standard_normal(rng, 10_000 * 3)).reshape(10_000, 3)
    vals = [diag.gaussian_kl_diag(m, v) for m, v in zip(mu, var)]
    assert min(vals) > 0.0


def _noisynet(sig=1.0, mu=0.0, encoder=()):
    p = QNetworkParams(NetSpec(1, 1, encoder, (), "noisynet"))
    p.head[0].W[...] = mu
    p.sigmas[0].W[...] = sig
    p.sigmas[0].b[...] = 1.0
    return p


def test_noisynet_kl_prior_equals_posterior():
    assert diag.noisynet_kl(_noisynet(), eps=1.0) == 0.0


def test_noisynet_kl_single_weight():
    assert diag.noisynet_kl(_noisynet(mu=1.0)) == pytest.approx(0.5, abs=1e-12)


def test_noisynet_kl_additive_head_term():
    one = QNetworkParams(NetSpec(1, 1, (), (), "noisynet"))
    two = QNetworkParams(NetSpec(2, 1, (), (), "noisynet"))
    for p in (one, two):
        p.head[0].W[...] = 0.7
        p.head[0].b[...] = 0.0
        p.sigmas[0].W[...] = 0.3
        p.sigmas[0].b[...] = 1.0
    assert diag.noisynet_kl(two) == pytest.approx(2 * diag.noisynet_kl(one), rel=1e-14)


def test_noisynet_kl_encoder_block():
    p = _noisynet(encoder=(1,))
    p.encoder[0].W[...] = 2.0
    p.head[0].W[...] = 0.0
    # encoder block: weight mu=2 and bias mu=0 at variance eps
    eps = 0.25
    expect = 0.5 * (-2 * math.log(eps) + 2 * eps + 4.0 - 2)
    assert diag.noisynet_kl(p, eps) == pytest.approx(expect, abs=1e-12)


def test_noisynet_kl_zero_sigma_errors():
    with pytest.raises(ContractError):
        diag.noisynet_kl(_noisynet(sig=0.0))
    with pytest.raises(ContractError):
        diag.noisynet_kl(QNetworkParams(NetSpec(1, 2, (), (), "plain")))


def _sane_const_sigma(sigma, obs=1, head_mu=0.0):
    p = QNetworkParams(NetSpec(obs, 1, (), (), "simple_sane", 1))
    p.sane.layers[1].b[...] = sigma
    p.head[0].W[...] = head_mu
    return p


def test_sane_kl_unit_sigma_zero():
    p = _sane_const_sigma(1.0)
    assert diag.sane_batch_kl(p, np.ones((3, 1)), eps=1.0, include_fixed_blocks=False) == 0.0


def test_sane_kl_half_sigma():
    p = _sane_const_sigma(0.5)
    per_coord = 0.5 * (-math.log(0.25) + 0.25 - 1.0)
    assert per_coord == pytest.approx(0.3181471805599453, abs=1e-12)
    # the head here holds one weight and one bias, both zero-mean
    kl = diag.sane_batch_kl(p, np.ones((1, 1)), include_fixed_blocks=False)
    assert kl == pytest.approx(2 * per_coord, abs=1e-12)
    assert kl == pytest.approx(diag.gaussian_kl_diag([0.0, 0.0], [0.25, 0.25]), abs=1e-12)


def test_sane_kl_average_invariance():
    p = _sane_const_sigma(0.5)
    one = diag.sane_batch_kl(p, np.ones((1, 1)))
    assert diag.sane_batch_kl(p, np.array([[1.0], [-4.0]])) == pytest.approx(one, rel=1e-15)


def test_sane_kl_structural():
    rng = Rng(3)
    p = build_qnetwork(NetSpec(3, 2, (4,), (4,), "q_sane", 5), rng)
    p.sane.layers[1].b[...] = 0.05  # keeps sigma off exact zero when every hidden unit is inactive
    S = standard_normal(rng, 18).reshape(6, 3)
    eps = 1e-3
    theta = np.concatenate([a.ravel() for l in p.sane.layers for a in (l.W, l.b)])
    enc = diag.encoder_vector(p)
    head = diag.head_vector(p)
    fixed = diag.gaussian_kl_diag(enc, np.full(enc.size, eps)) + diag.gaussian_kl_diag(theta, np.full(theta.size, eps))
    per_state = []
    for s in S:
        sig = diag.sane_state_kls(p, s[None, :], eps, include_fixed_blocks=False)[0]
        h = np.maximum(s @ p.encoder[0].W.T + p.encoder[0].b, 0.0)
        q = np.maximum(h @ p.head[0].W.T + p.head[0].b, 0.0) @ p.head[1].W.T + p.head[1].b
        sigma = sane_sigma(p.sane, h, q)
        assert sig == pytest.approx(diag.gaussian_kl_diag(head, np.full(head.size, sigma**2)), abs=1e-12)
        per_state.append(sig + fixed)
    assert abs(diag.sane_batch_kl(p, S, eps) - np.mean(per_state)) <= 1e-12 * max(1.0, abs(np.mean(per_state)))


def test_sane_kl_zero_sigma_names_rows():
    p = _sane_const_sigma(0.0)
    with pytest.raises(ContractError, match=r"\[0, 1\]"):
        diag.sane_batch_kl(p, np.ones((2, 1)))


def test_hns_examples():
    assert diag.hns(8503, 8503, 210) == 1.0
    assert diag.hns(210, 8503, 210) == 0.0
    assert abs(diag.hns(126213, 8503, 210) - 126003 / 8293) <= 1e-12  # 15.19389846...
    with pytest.raises(ZeroDivisionError):
        diag.hns(1, 2, 2)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(0.01, 100), st.floats(-1e4, 1e4))
def test_hns_affine_invariance(agent, human, rand, a, c):
    if abs(human - rand) < 1e-2:
        return
    base = diag.hns(agent, human, rand)
    moved = diag.hns(a * agent + c, a * human + c, a * rand + c)
    assert moved == pytest.approx(base, rel=1e-6, abs=1e-6)


def test_shipped_baselines_verbatim():
    table = diag.load_baselines()
    assert set(table.entries) == set(BASELINES)
    for game, (human, rand) in BASELINES.items():
        assert table[game] == (float(human), float(rand))


def test_mean_hns_single_and_human():
    table = diag.load_baselines()
    assert diag.mean_hns({"Qbert": 5000.0}, table, ["Qbert"]) == diag.hns(5000.0, *table["Qbert"])
    human = {g: h for g, (h, _) in table.entries.items()}
    assert diag.mean_hns(human, table) == 1.0
    with pytest.raises(ContractError):
        diag.mean_hns({"Qbert": 1.0}, table, ["Pong"])


def test_shipped_scores_match_exact_arithmetic(tmp_path):
    table = diag.load_baselines()
    for agent in ATARI_MEANS:
        scores = diag.read_scores(_write_shipped(tmp_path, agent))
        for game in ATARI_MEANS[agent]:
            assert abs(diag.hns(scores[game], *table[game]) - float(exact_hns(agent, game))) <= 1e-9


def _write_shipped(tmp_path, agent):
    path = tmp_path / f"{agent}.csv"
    path.write_text(diag.shipped_text(f"atari_means/{agent}.csv"))
    return path


def test_read_scores_formats(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("# comment\ngame,score\nAsterix, 10\n\nQbert,2.5\n")
    assert diag.read_scores(path) == {"Asterix": 10.0, "Qbert": 2.5}
    with pytest.raises(OSError, match="missing.csv"):
        diag.read_scores(tmp_path / "missing.csv")


def test_sigma_probe_zero_module():
    p = build_qnetwork(NetSpec(4, 4, (8,), (8,), "simple_sane", 8), Rng(0))
    p.zero_noise()
    report = diag.sigma_probe(p, cliff_bridge())
    assert report.means == {HIGH_RISK: 0.0, LOW_RISK: 0.0}
    assert len(report.records) == 31


def test_sigma_probe_hand_net():
    p = QNetworkParams(NetSpec(4, 4, (), (), "simple_sane", 1))
    p.sane.layers[0].W[...] = [[1.0, 0.0, 0.0, 0.0]]
    p.sane.layers[1].W[...] = [[-2.0]]
    p.sane.layers[1].b[...] = [0.25]
    env = cliff_bridge(5, 6)
    report = diag.sigma_probe(p, env)
    for sid, label, value in report.records:
        x = env.observations[sid][0]
        assert value == abs(-2.0 * max(x, 0.0) + 0.25)
    again = diag.sigma_probe(p, env)
    assert again.records == report.records


def test_sigma_probe_requires_sane():
    with pytest.raises(ContractError):
        diag.sigma_probe(build_qnetwork(NetSpec(4, 4, (8,), (8,), "noisynet"), Rng(0)), cliff_bridge())


def test_metrics_header_only(tmp_path):
    path = tmp_path / "m.csv"
    diag.write_metrics([], path)
    assert path.read_text() == "step,episode,episode_return,loss,mean_abs_sigma,kl_term,wallclock_ms\n"


def test_metrics_roundtrip_repr(tmp_path):
    row = MetricsRow(12, 3, 0.1 + 0.2, 1e-300, None, -2.5, None)
    path = tmp_path / "m.csv"
    diag.write_metrics([row], path)
    got = diag.read_metrics(path)[0]
    assert got["step"] == "12" and got["episode"] == "3"
    assert float(got["episode_return"]) == 0.1 + 0.2
    assert float(got["loss"]) == 1e-300
    assert got["mean_abs_sigma"] == "" and got["wallclock_ms"] == ""


def _random_checkpoint(rng, strategy):
    spec = NetSpec(1 + int(rng.integers(4, 1)[0]), 2 + int(rng.integers(3, 1)[0]), (3,), (2,), strategy, 3)
    p = QNetworkParams(spec, standard_normal(rng, QNetworkParams(spec).flat.size) * 10.0 ** float(
        rng.integers(20, 1)[0] - 10))
    adam = AdamState(standard_normal(rng, p.flat.size), np.abs(standard_normal(rng, p.flat.size)), 7)
    target = QNetworkParams(spec, standard_normal(rng, p.flat.size))
    return diag.Checkpoint(p, {"seed": 3, "env": "cliff_bridge"}, 99, target, adam, {"act": Rng(5, 3, 17)})


def test_checkpoint_roundtrip_bitwise():
    rng = Rng(8)
    strategies = ("plain", "epsilon_greedy", "noisynet", "simple_sane", "q_sane")
    for k in range(1000):
        ck = _random_checkpoint(rng, strategies[k % 5])
        text = diag.dumps_checkpoint(ck)
        back = diag.loads_checkpoint(text)
        assert back.params.flat.tobytes() == ck.params.flat.tobytes()
        assert back.target.flat.tobytes() == ck.target.flat.tobytes()
        assert back.adam.m.tobytes() == ck.adam.m.tobytes() and back.adam.t == 7
        assert back.rngs["act"].state() == (5, 3, 17)
        assert diag.dumps_checkpoint(back) == text


def test_checkpoint_file_and_magic(tmp_path):
    ck = _random_checkpoint(Rng(9), "simple_sane")
    path = tmp_path / "a" / "c.ckpt"
    diag.save_checkpoint(ck, path)
    assert path.read_text().splitlines()[0] == "SANEX-CKPT-v1"
    assert diag.load_checkpoint(path).strategy == "simple_sane"
    (tmp_path / "bad.ckpt").write_text("hello\n{}")
    with pytest.raises(ContractError):
        diag.load_checkpoint(tmp_path / "bad.ckpt")
