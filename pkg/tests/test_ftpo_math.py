import math

import numpy as np
import pytest

from antislop.backends import load_mock_spec
from antislop.ftpo_math import (
    FtpoInstance,
    FtpoLossParams,
    MockLogitProvider,
    batch_eval,
    finite_difference_grad,
    grad_pref,
    grad_total,
    near_kink,
    nontarget_mse,
    pref_loss,
    softplus,
    target_mse,
    total_loss,
)
from antislop.models import FtpoSample, SampleSource, TokenRef


def _random_instance(rng, winning=False, m=2.0):
    size = int(rng.integers(8, 65))
    k = int(rng.integers(1, min(6, size - 2) + 1))
    idx = rng.choice(size, size=k + 1, replace=False)
    rejected, chosen = int(idx[0]), [int(i) for i in idx[1:]]
    y_ref = rng.normal(0.0, 2.0, size)
    y = y_ref + rng.normal(0.0, 1.0, size)
    if winning:
        y[chosen] = y[rejected] + m + rng.uniform(0.001, 3.0, k)
    return FtpoInstance(y=y, y_ref=y_ref, rejected=rejected, chosen=chosen)


def _sample(prompt, rejected, chosen):
    return FtpoSample(
        prompt_text=prompt,
        rejected=TokenRef(text=rejected),
        chosen=[TokenRef(text=c) for c in chosen],
        source=SampleSource(pattern=rejected, generation_id="g", position=0),
    )


def test_instance_validation():
    """Test malformed instances are rejected."""
    y = np.zeros(5)
    with pytest.raises(ValueError):
        FtpoInstance(y=y, y_ref=np.zeros(4), rejected=0, chosen=[1])
    with pytest.raises(ValueError):
        FtpoInstance(y=y, y_ref=y, rejected=0, chosen=[])
    with pytest.raises(ValueError):
        FtpoInstance(y=y, y_ref=y, rejected=1, chosen=[1, 2])
    with pytest.raises(ValueError):
        FtpoInstance(y=y, y_ref=y, rejected=0, chosen=[2, 2])
    with pytest.raises(ValueError):
        FtpoInstance(y=y, y_ref=y, rejected=0, chosen=[9])
    with pytest.raises(ValueError):
        FtpoInstance(y=np.zeros(3), y_ref=np.zeros(3), rejected=0, chosen=[1, 2])


def test_preference_loss_closed_forms():
    """Test the preference term on one chosen token."""
    even = FtpoInstance(y=np.zeros(4), y_ref=np.zeros(4), rejected=1, chosen=[0])
    value, weights = pref_loss(even, m=2.0)
    assert weights.tolist() == [1.0]
    assert value == pytest.approx(math.log(1 + math.e ** 2))
    assert value == pytest.approx(2.12693, abs=1e-5)

    losing = FtpoInstance(y=np.array([-3.0, 0.0, 0.0, 0.0]), y_ref=np.zeros(4), rejected=1, chosen=[0])
    value, weights = pref_loss(losing, m=2.0)
    assert weights.tolist() == [1.0]
    assert value == pytest.approx(5.00672, abs=1e-5)


def test_softplus_is_stable():
    """Test softplus on extreme inputs."""
    assert softplus(1000.0) == pytest.approx(1000.0)
    assert softplus(-1000.0) == pytest.approx(0.0)
    assert softplus(0.0) == pytest.approx(math.log(2))


def test_target_and_nontarget_terms():
    """Test the dead-zone and plain MSE tethers."""
    inst = FtpoInstance(y=np.array([1.5, 0.0, 0.0, 0.0]), y_ref=np.zeros(4), rejected=1, chosen=[0])
    assert target_mse(inst, tau_target=0.5) == pytest.approx(0.5)
    assert target_mse(inst, tau_target=2.0) == 0.0
    assert nontarget_mse(inst) == 0.0
    shifted = inst.with_logits(np.array([1.5, 0.0, 0.7, 0.7]))
    assert nontarget_mse(shifted) == pytest.approx(0.49)


def test_worked_total_loss():
    """Test the full loss on a hand-evaluated vector."""
    inst = FtpoInstance(y=np.array([2.6, 0.0, 0.0, -1.0, 0.3]), y_ref=np.zeros(5), rejected=3, chosen=[0])
    value, parts = total_loss(inst, FtpoLossParams())
    assert parts["pref"] == 0.0
    assert parts["target"] == pytest.approx(2.33)
    assert parts["nontarget"] == pytest.approx(0.03)
    assert value == pytest.approx(0.1285)


def test_zero_lambdas_reduce_to_preference():
    """Test degenerate weights leave only the preference term."""
    rng = np.random.default_rng(0)
    inst = _random_instance(rng)
    params = FtpoLossParams(lambda_target=0.0, lambda_nontarget=0.0)
    assert total_loss(inst, params)[0] == pref_loss(inst, params.m)[0]


def test_gradient_matches_finite_differences():
    """Test the analytic gradient against central differences on random instances."""
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(1000):
        params = FtpoLossParams(
            m=float(rng.uniform(0.5, 3.0)),
            tau_target=float(rng.uniform(0.0, 1.0)),
            lambda_target=float(rng.uniform(0.0, 0.5)),
            lambda_nontarget=float(rng.uniform(0.0, 1.0)),
        )
        inst = _random_instance(rng, m=params.m)
        if near_kink(inst, params):
            continue
        analytic = grad_total(inst, params)
        numeric = finite_difference_grad(inst, params, step=1e-4)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-3)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-5
        checked += 1
    assert checked > 900


def test_winning_chosen_tokens_switch_preference_off():
    """Test pref loss and its gradient are exactly zero once every chosen token wins by m."""
    rng = np.random.default_rng(11)
    for _ in range(500):
        m = float(rng.uniform(0.5, 3.0))
        inst = _random_instance(rng, winning=True, m=m)
        value, weights = pref_loss(inst, m)
        assert value == 0.0
        assert not weights.any()
        assert not grad_pref(inst, m).any()
        assert not grad_pref(inst, m, detach_weights=True).any()


def test_flat_regions_give_zero_gradient():
    """Test a winning, dead-zone, on-reference instance has no gradient."""
    y_ref = np.linspace(-1.0, 1.0, 6)
    y = y_ref.copy()
    y[0] = y_ref[3] + 2.5
    inst = FtpoInstance(y=y, y_ref=y_ref, rejected=3, chosen=[0])
    params = FtpoLossParams(m=2.0, tau_target=5.0)
    assert not grad_total(inst, params).any()


def test_nontarget_gradient_component():
    """Test a lone non-target deviation gets gradient 2*lambda*d/|N|."""
    y_ref = np.zeros(6)
    y = y_ref.copy()
    y[0] = 3.0
    y[4] = 0.25
    inst = FtpoInstance(y=y, y_ref=y_ref, rejected=3, chosen=[0])
    params = FtpoLossParams(tau_target=5.0)
    grad = grad_total(inst, params)
    assert grad[4] == pytest.approx(2 * 0.4 * 0.25 / 4)
    assert grad[5] == 0.0


def test_nontarget_perturbation_only_moves_nontarget_term():
    """Test non-target logits never influence the preference or target terms."""
    rng = np.random.default_rng(5)
    params = FtpoLossParams()
    for _ in range(200):
        inst = _random_instance(rng)
        y = inst.y.copy()
        y[inst.nontarget] += rng.normal(0.0, 1.0, len(inst.nontarget))
        _, before = total_loss(inst, params)
        _, after = total_loss(inst.with_logits(y), params)
        assert after["pref"] == before["pref"]
        assert after["target"] == before["target"]
        assert after["nontarget"] != before["nontarget"]


def test_near_kink():
    """Test boundary detection."""
    inst = FtpoInstance(y=np.array([2.0, 0.0, 0.0, 0.0]), y_ref=np.zeros(4), rejected=1, chosen=[0])
    assert near_kink(inst, FtpoLossParams(m=2.0))
    assert not near_kink(inst, FtpoLossParams(m=3.0, tau_target=1.0))


class _TableProvider:
    def __init__(self, vocab, logits):
        self.vocab = {t: i for i, t in enumerate(vocab)}
        self.table = logits

    def token_index(self, text):
        return self.vocab.get(text)

    def logits(self, prompt_text):
        y, y_ref = self.table[prompt_text]
        return np.asarray(y, dtype=float), np.asarray(y_ref, dtype=float)


def test_batch_eval_counts_wins_and_skips():
    """Test accuracy over a hand-built batch with two wins and one unresolvable sample."""
    provider = _TableProvider(["a", "b", "c", "d"], {
        "p1": ([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]),
        "p2": ([0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]),
        "p3": ([0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]),
    })
    samples = [
        _sample("p1", "b", ["a"]),
        _sample("p2", "c", ["b"]),
        _sample("p3", "d", ["a", "b"]),
        _sample("p1", "zzz", ["a"]),
    ]
    report = batch_eval(samples, provider, FtpoLossParams(), target_accuracy=0.6)
    assert report.n_samples == 3
    assert report.skipped == 1
    assert report.pref_accuracy == pytest.approx(2 / 3)
    assert report.reached_target_accuracy is True
    assert report.delta_chosen == pytest.approx((1.0 + 2.0 + 0.0) / 3)
    assert report.delta_rejected == pytest.approx((0.0 + 0.0 + 1.0) / 3)
    assert report.abs_delta_rejected == pytest.approx(report.delta_rejected)


def test_batch_eval_identical_models_have_no_shift(repo_root):
    """Test a policy equal to its reference reports zero logit shifts."""
    spec = load_mock_spec(repo_root / "configs" / "mock_model.yaml")
    provider = MockLogitProvider(spec)
    samples = [_sample("Once. Then.", " Elara", [" Mira", " She"]), _sample("The", " tapestry", [" forest"])]
    report = batch_eval(samples, provider, FtpoLossParams())
    assert report.n_samples == 2
    assert report.delta_chosen == 0.0
    assert report.delta_rejected == 0.0
    assert report.delta_other == 0.0
    assert report.abs_delta_other == 0.0
    assert report.components["nontarget"] == 0.0


def test_mock_logit_provider_reads_policy(repo_root):
    """Test the policy spec moves logits away from the reference."""
    reference = load_mock_spec(repo_root / "configs" / "mock_model.yaml")
    policy = load_mock_spec(repo_root / "configs" / "mock_policy.yaml")
    provider = MockLogitProvider(reference, policy)
    y, y_ref = provider.logits("It ended.")
    elara = provider.token_index(" Elara")
    assert y[elara] == pytest.approx(math.log(0.1))
    assert y_ref[elara] == pytest.approx(math.log(0.4))
    report = batch_eval([_sample("It ended.", " Elara", [" Mira", " Kael"])], provider, FtpoLossParams())
    assert report.delta_rejected < 0 < report.delta_chosen
    assert report.abs_delta_rejected == pytest.approx(-report.delta_rejected)
    bad = reference.model_copy(update={"vocabulary": list(reversed(reference.vocabulary))})
    with pytest.raises(ValueError):
        MockLogitProvider(reference, bad)


def test_preference_term_ignores_a_shared_logit_shift():
    """Test adding a constant to the policy logits moves only the anchoring terms."""
    rng = np.random.default_rng(17)
    for _ in range(50):
        inst = _random_instance(rng)
        c = float(rng.uniform(1.0, 5.0)) * (1 if rng.random() < 0.5 else -1)
        shifted = inst.with_logits(inst.y + c)
        assert pref_loss(shifted, 2.0)[0] == pytest.approx(pref_loss(inst, 2.0)[0], abs=1e-9)
        assert np.allclose(grad_pref(shifted, 2.0), grad_pref(inst, 2.0))
        assert nontarget_mse(shifted) != pytest.approx(nontarget_mse(inst))
        assert target_mse(shifted, 0.0) != pytest.approx(target_mse(inst, 0.0))

        both = FtpoInstance(y=inst.y + c, y_ref=inst.y_ref + c, rejected=inst.rejected, chosen=inst.chosen)
        assert total_loss(both, FtpoLossParams())[0] == pytest.approx(total_loss(inst, FtpoLossParams())[0])
