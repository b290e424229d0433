"""Decision-rule tests: reliability, decoupling, rejection, total loss."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import osdg.numerics as nx
from osdg.dataio import UNKNOWN_LABEL
from osdg.ssud import (
    SsudConfig,
    decide,
    decide_batch,
    disentangle,
    make_decision,
    rejection_score,
    reliability,
    total_loss,
)

UNIT = st.floats(min_value=0.0, max_value=1.0)


def test_config_validation():
    SsudConfig().validate()
    SsudConfig(tau_decouple=1.0).validate()  # boundary included by design
    for bad in (
        SsudConfig(tau_decouple=0.0),
        SsudConfig(tau_decouple=1.2),
        SsudConfig(kappa_down=0.0),
        SsudConfig(w_unc=0.7, w_conf=0.7),
        SsudConfig(w_unc=-0.1, w_conf=1.1),
        SsudConfig(variant="bespoke"),
        SsudConfig(tau=0.0),
    ):
        with pytest.raises(ValueError):
            bad.validate()


def test_reliability_examples():
    assert reliability(0.5, 0.5) == (0.5, 0.5, 0.0)
    r_spec, r_spat, delta = reliability(0.1, 0.6)
    assert (r_spec, r_spat) == (0.9, 0.4)
    assert delta == pytest.approx(0.5)
    assert reliability(0.6, 0.1)[2] == pytest.approx(delta)  # symmetric
    with pytest.raises(ValueError):
        reliability(1.3, 0.5)


def test_disentangle_decoupled_example():
    cfg = SsudConfig(tau_decouple=0.3, kappa_down=0.5)
    u_final, branch = disentangle(0.1, 0.6, 0.3, cfg)
    assert u_final == pytest.approx(0.3)  # max(0.1, 0.5 * 0.6)
    assert branch == "spectral"


def test_disentangle_otherwise_branch():
    cfg = SsudConfig()
    u_final, branch = disentangle(0.40, 0.45, 0.7, cfg)
    assert u_final == pytest.approx(0.7)
    assert branch == "combined"
    # exact tie also lands in the otherwise branch
    assert disentangle(0.3, 0.3, 0.9, cfg) == (0.9, "combined")


@given(UNIT, UNIT, UNIT)
def test_disentangle_swap_mirrors_branch(u_spec, u_spat, u_comb):
    cfg = SsudConfig()
    u_a, b_a = disentangle(u_spec, u_spat, u_comb, cfg)
    u_b, b_b = disentangle(u_spat, u_spec, u_comb, cfg)
    assert u_a == pytest.approx(u_b)
    flip = {"spectral": "spatial", "spatial": "spectral", "combined": "combined"}
    assert b_b == flip[b_a]


def test_disentangle_variants():
    assert disentangle(0.1, 0.6, 0.3, SsudConfig(variant="no_decoupling")) == (0.3, "combined")
    u, b = disentangle(0.1, 0.6, 0.3, SsudConfig(variant="simple_average"))
    assert u == pytest.approx(0.35) and b == "combined"
    assert disentangle(0.1, 0.6, 0.3, SsudConfig(variant="max_uncertainty")) == (0.6, "spatial")
    assert disentangle(0.6, 0.6, 0.3, SsudConfig(variant="max_uncertainty")) == (0.6, "spectral")
    # weighting-only variants still run the decoupling rule
    assert disentangle(0.1, 0.6, 0.3, SsudConfig(variant="no_confidence"))[1] == "spectral"
    with pytest.raises(ValueError):
        disentangle(0.1, 0.6, 0.3, SsudConfig(variant="mystery"))


@given(UNIT, UNIT, UNIT)
def test_tau_decouple_one_matches_no_decoupling(u_spec, u_spat, u_comb):
    full = SsudConfig(tau_decouple=1.0)
    off = SsudConfig(variant="no_decoupling")
    assert disentangle(u_spec, u_spat, u_comb, full) == disentangle(u_spec, u_spat, u_comb, off)


def test_rejection_score_examples():
    cfg = SsudConfig(w_unc=0.5, w_conf=0.5)
    p = np.array([0.9, 0.05, 0.05])
    score, p_max, k_hat = rejection_score(0.3, p, cfg)
    assert score == pytest.approx(0.20)
    assert p_max == pytest.approx(0.9)
    assert k_hat == 1
    # zero uncertainty and a one-hot vector score zero under any weights
    onehot = np.array([0.0, 1.0, 0.0])
    assert rejection_score(0.0, onehot, SsudConfig(w_unc=0.3, w_conf=0.7))[0] == pytest.approx(0.0)
    # forced weightings
    p4 = np.array([0.4, 0.3, 0.3])
    assert rejection_score(0.99, p4, SsudConfig(variant="no_uncertainty"))[0] == pytest.approx(0.6)
    assert rejection_score(0.4, p4, SsudConfig(variant="no_confidence"))[0] == pytest.approx(0.4)
    forced = rejection_score(0.3, np.array([0.9, 0.05, 0.05]), SsudConfig(variant="fixed_weights", w_unc=0.8, w_conf=0.2))
    assert forced[0] == pytest.approx(0.20)


def test_rejection_score_tie_breaks_to_lowest_class():
    p = np.array([0.25, 0.35, 0.35, 0.05])
    assert rejection_score(0.0, p, SsudConfig())[2] == 2


def test_rejection_score_rejects_unnormalized():
    with pytest.raises(ValueError):
        rejection_score(0.5, np.array([0.7, 0.7]), SsudConfig())


def test_argmax_invariant_under_temperature():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(50, 6))
    for temp in (0.25, 1.0, 4.0):
        z = logits / temp
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        k = [rejection_score(0.0, row, SsudConfig())[2] for row in p]
        assert k == list(logits.argmax(axis=1) + 1)


def test_decide_boundaries():
    assert decide(0.20, 3, 0.5) == 3
    assert decide(0.5, 3, 0.5) == 3  # boundary stays known
    assert decide(1.0, 3, 0.5) == UNKNOWN_LABEL
    with pytest.raises(ValueError):
        decide(0.2, 3, 0.0)


@given(UNIT, UNIT, st.floats(min_value=0.01, max_value=0.99))
def test_decide_monotone(score_a, score_b, tau):
    lo, hi = sorted((score_a, score_b))
    if decide(lo, 1, tau) == UNKNOWN_LABEL:
        assert decide(hi, 1, tau) == UNKNOWN_LABEL


@settings(max_examples=60)
@given(UNIT, UNIT, UNIT, st.sampled_from(["full", "no_decoupling", "fixed_weights", "simple_average",
                                          "max_uncertainty", "no_confidence", "no_uncertainty"]))
def test_r_score_stays_in_unit_interval(u_spec, u_spat, u_comb, variant):
    cfg = SsudConfig(variant=variant)
    d = make_decision(u_spec, u_spat, u_comb, np.array([0.6, 0.3, 0.1]), cfg)
    assert 0.0 <= d.r_score <= 1.0
    assert d.delta_r == pytest.approx(abs(d.r_spec - d.r_spat))
    assert (d.prediction == UNKNOWN_LABEL) == (d.r_score > cfg.tau)


def test_make_decision_traces_example():
    cfg = SsudConfig()
    d = make_decision(0.1, 0.6, 0.3, np.array([0.9, 0.05, 0.05]), cfg)
    assert d.branch == "spectral"
    assert d.u_final == pytest.approx(0.3)
    assert d.r_score == pytest.approx(0.20)
    assert d.prediction == 1


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1),
       st.sampled_from(["full", "simple_average", "max_uncertainty", "no_uncertainty", "no_decoupling"]))
def test_decide_batch_matches_scalar_loop(seed, variant):
    rng = np.random.default_rng(seed)
    n, k = 17, 4
    u_spec = rng.uniform(size=n)
    u_spat = rng.uniform(size=n)
    u_comb = rng.uniform(size=n)
    p = rng.dirichlet(np.ones(k), size=n)
    cfg = SsudConfig(variant=variant, tau=0.4)
    batch = decide_batch(u_spec, u_spat, u_comb, p, cfg)
    for i in range(n):
        d = make_decision(u_spec[i], u_spat[i], u_comb[i], p[i], cfg)
        assert batch.u_final[i] == pytest.approx(d.u_final)
        assert batch.branch[i] == d.branch
        assert batch.r_score[i] == pytest.approx(d.r_score)
        assert batch.k_hat[i] == d.k_hat
        assert batch.prediction[i] == d.prediction


class _StubNetwork:
    def __init__(self, cls=1.5, edl=2.0, domain=3.0, recon=4.0):
        self.values = {"cls": cls, "edl": edl, "domain": domain, "recon": recon}

    def training_terms(self, batch, lam_reg):
        return {k: nx.Tensor(np.asarray(v)) for k, v in self.values.items()}


def test_total_loss_weighting():
    net = _StubNetwork()
    total, parts = total_loss(net, batch=None, alpha=0.0, beta=0.0, gamma=0.0)
    assert total.item() == pytest.approx(1.5)
    total2, parts2 = total_loss(net, batch=None, alpha=0.5, beta=0.1, gamma=0.3)
    assert total2.item() == pytest.approx(1.5 + 0.5 * 2.0 + 0.1 * 3.0 + 0.3 * 4.0)
    assert parts2["total"] == pytest.approx(sum(parts2[k] for k in ("cls", "edl", "domain", "recon")), abs=1e-6)
    # doubling gamma moves the total by exactly one extra gamma * recon
    total3, _ = total_loss(net, batch=None, alpha=0.5, beta=0.1, gamma=0.6)
    assert total3.item() - total2.item() == pytest.approx(0.3 * 4.0, abs=1e-9)
    with pytest.raises(ValueError):
        total_loss(net, None, alpha=-0.1, beta=0.0, gamma=0.0)
