import math

import numpy as np
import pytest
import torch

from voxtrain.errors import AllMasked
from voxtrain.losses import LossSpec, binary_loss, masked_loss, nll_event_loss
from voxtrain.manifest import LabelSpec

BIN = LabelSpec("y", "binary")
EVT = LabelSpec("os", "event", unit="months")


def logit(p):
    return math.log(p / (1 - p))


def test_bce_masked_single_observed_entry():
    outputs = torch.tensor([[logit(0.5)], [logit(0.9)]])
    labels = torch.tensor([[1.0], [0.0]])  # second label is masked
    masks = torch.tensor([[True], [False]])
    loss = masked_loss(outputs, labels, torch.zeros_like(labels), masks, [BIN], LossSpec())
    assert float(loss) == pytest.approx(-math.log(0.5), abs=1e-6)


def test_focal_gamma_zero_equals_bce():
    torch.manual_seed(0)
    z = torch.randn(16)
    y = (torch.rand(16) > 0.5).float()
    focal = binary_loss(z, y, LossSpec(binary="focal", focal_gamma=0.0))
    bce = binary_loss(z, y, LossSpec(binary="bce"))
    assert torch.allclose(focal, bce, atol=1e-5)


def test_all_masked_raises():
    outputs = torch.zeros(3, 2)
    masks = torch.zeros(3, 2, dtype=torch.bool)
    with pytest.raises(AllMasked):
        masked_loss(outputs, torch.zeros(3, 2), torch.zeros(3, 2), masks,
                    [BIN, EVT], LossSpec())


def test_masked_gradient_exactly_zero():
    torch.manual_seed(0)
    outputs = torch.randn(5, 2, requires_grad=True)
    labels = torch.rand(5, 2).round()
    labels[:, 1] = torch.rand(5) * 10 + 1  # event times
    events = torch.zeros(5, 2)
    events[:, 1] = torch.tensor([1.0, 0.0, 1.0, 0.0, 1.0])
    masks = torch.tensor([[True, False], [False, True], [True, True],
                          [False, False], [True, True]])
    loss = masked_loss(outputs, labels, events, masks, [BIN, EVT], LossSpec())
    loss.backward()
    grad = outputs.grad
    assert grad is not None
    assert torch.all(grad[~masks] == 0.0)  # identity, not approximately
    assert torch.any(grad[masks] != 0.0)


def test_loss_invariant_to_masked_label_perturbation():
    torch.manual_seed(1)
    outputs = torch.randn(6, 1)
    labels = torch.rand(6, 1).round()
    masks = torch.tensor([[True], [False], [True], [False], [True], [True]])
    base = float(masked_loss(outputs, labels, torch.zeros(6, 1), masks, [BIN], LossSpec()))
    perturbed = labels.clone()
    perturbed[~masks] = 123.0
    after = float(masked_loss(outputs, perturbed, torch.zeros(6, 1), masks, [BIN], LossSpec()))
    assert after == base


def test_bce_monotone_toward_label():
    spec = LossSpec()
    y = torch.tensor([1.0])
    worse = binary_loss(torch.tensor([logit(0.6)]), y, spec)
    better = binary_loss(torch.tensor([logit(0.8)]), y, spec)
    assert float(better) < float(worse)


def test_asl_and_hill_sane():
    torch.manual_seed(0)
    z = torch.randn(12)
    y = (torch.rand(12) > 0.5).float()
    for name in ("asl", "hill"):
        values = binary_loss(z, y, LossSpec(binary=name))
        assert torch.isfinite(values).all()
    # asl with neutral parameters reduces to bce
    neutral = LossSpec(binary="asl", asl_gamma_pos=0.0, asl_gamma_neg=0.0, asl_margin=0.0)
    assert torch.allclose(binary_loss(z, y, neutral), binary_loss(z, y, LossSpec()), atol=1e-5)


# --- event loss ------------------------------------------------------------


def test_nll_equal_risks_closed_form():
    loss = nll_event_loss(torch.zeros(2), torch.tensor([1.0, 2.0]),
                          torch.tensor([1.0, 0.0]))
    assert float(loss) == pytest.approx(math.log(2.0), abs=1e-6)


def test_nll_single_event_subject_is_zero():
    loss = nll_event_loss(torch.tensor([0.7]), torch.tensor([5.0]), torch.tensor([1.0]))
    assert float(loss) == pytest.approx(0.0, abs=1e-6)


def test_nll_shift_invariance():
    torch.manual_seed(0)
    risks = torch.randn(8)
    times = torch.rand(8) * 20 + 1
    events = (torch.rand(8) > 0.4).float()
    events[0] = 1.0
    a = float(nll_event_loss(risks, times, events))
    b = float(nll_event_loss(risks + 3.7, times, events))
    assert a == pytest.approx(b, abs=1e-5)


def test_nll_breslow_ties_share_risk_set():
    # two events at the same time: both see the full 3-subject risk set
    risks = torch.tensor([1.0, 2.0, 3.0])
    times = torch.tensor([1.0, 1.0, 2.0])
    events = torch.tensor([1.0, 1.0, 0.0])
    lse = math.log(math.exp(1) + math.exp(2) + math.exp(3))
    expected = -((1.0 - lse) + (2.0 - lse)) / 2
    assert float(nll_event_loss(risks, times, events)) == pytest.approx(expected, abs=1e-5)


def test_nll_no_events_contributes_zero_with_graph():
    risks = torch.randn(4, requires_grad=True)
    loss = nll_event_loss(risks, torch.rand(4) + 1, torch.zeros(4))
    assert float(loss) == 0.0
    loss.backward()  # still attached to the graph
    assert risks.grad is not None


def test_event_masking_excludes_subjects_from_risk_set():
    risks = torch.tensor([0.0, 0.0, 5.0])
    times = torch.tensor([1.0, 2.0, 1.5])
    events = torch.tensor([1.0, 0.0, 1.0])
    masks = torch.tensor([True, True, False])
    loss = nll_event_loss(risks, times, events, masks)
    assert float(loss) == pytest.approx(math.log(2.0), abs=1e-6)


def test_multi_endpoint_mean():
    outputs = torch.tensor([[logit(0.5), 0.0], [logit(0.5), 0.0]])
    labels = torch.tensor([[1.0, 1.0], [1.0, 2.0]])
    events = torch.tensor([[0.0, 1.0], [0.0, 0.0]])
    masks = torch.ones(2, 2, dtype=torch.bool)
    loss = masked_loss(outputs, labels, events, masks, [BIN, EVT], LossSpec())
    # binary: -ln 0.5 on both rows; event: log 2 closed form; mean of the two
    assert float(loss) == pytest.approx((math.log(2) + math.log(2)) / 2, abs=1e-6)


def test_inverse_frequency_weights(synthetic_manifest):
    from voxtrain.losses import inverse_frequency_weights

    specs = synthetic_manifest.label_specs
    ids = [r.patient_id for r in synthetic_manifest.records]
    weights = inverse_frequency_weights(synthetic_manifest, specs, ids)
    assert len(weights) == len(specs)
    for spec, w in zip(specs, weights):
        if spec.kind == "event":
            assert w is None
        else:
            values = [r.labels[spec.name].value for r in synthetic_manifest.records
                      if r.labels[spec.name].observed]
            n_pos = sum(v == 1.0 for v in values)
            assert w == pytest.approx((len(values) - n_pos) / n_pos)
