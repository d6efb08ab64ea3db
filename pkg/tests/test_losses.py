import math

import pytest
import torch
import torch.nn.functional as F
from torch.autograd import gradcheck

from datamodel.errors import ContractError
from losses import (
    LOSS_WARNINGS,
    LossToggles,
    TrainingStepError,
    detection_loss,
    mil_box_loss,
    mil_fea_loss,
    mil_img_loss,
    multi_id_targets,
    reset_loss_warnings,
    sra_id_loss,
    sra_obj_loss,
    total_loss,
)

LN2 = math.log(2.0)


@pytest.fixture(autouse=True)
def _clean_warnings():
    reset_loss_warnings()
    yield
    reset_loss_warnings()


# ----------------------------------------------------------------- detection

def test_detection_loss_perfect_prediction_is_near_zero():
    labels = torch.tensor([1, 0, 1, -1])
    logits = torch.tensor([50.0, -50.0, 50.0, 0.0])
    targets = torch.randn(4, 4, dtype=torch.float32)
    loss = detection_loss(logits, targets.clone(), labels, targets)
    assert float(loss) == pytest.approx(0.0, abs=1e-6)


def test_detection_loss_background_only_has_no_regression_term():
    labels = torch.zeros(3, dtype=torch.long)
    logits = torch.zeros(3)
    deltas = torch.randn(3, 4)
    targets = torch.randn(3, 4)
    assert float(detection_loss(logits, deltas, labels, targets)) == pytest.approx(LN2, abs=1e-6)


def _detection_reference(logits, deltas, labels, targets, beta=1.0 / 9.0):
    cls, reg, count = 0.0, 0.0, 0
    for i in range(len(labels)):
        y = int(labels[i])
        if y < 0:
            continue
        count += 1
        z = float(logits[i])
        # log(1 + exp(-|z|)) keeps large logits finite
        softplus = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
        cls += softplus - y * z
        if y == 1:
            for j in range(4):
                d = abs(float(deltas[i, j] - targets[i, j]))
                reg += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
    return (cls + reg) / count


def _random_detection_inputs(seed):
    g = torch.Generator().manual_seed(seed)
    n = int(torch.randint(1, 9, (1,), generator=g))
    logits = 3.0 * torch.randn(n, generator=g, dtype=torch.float64)
    deltas = torch.randn(n, 4, generator=g, dtype=torch.float64)
    targets = torch.randn(n, 4, generator=g, dtype=torch.float64)
    labels = torch.randint(-1, 2, (n,), generator=g)
    labels[0] = 1
    return logits, deltas, labels, targets


def test_detection_loss_matches_scalar_reference():
    g = torch.Generator().manual_seed(3)
    logits = torch.randn(5, generator=g, dtype=torch.float64)
    deltas = torch.randn(5, 4, generator=g, dtype=torch.float64)
    targets = torch.randn(5, 4, generator=g, dtype=torch.float64)
    labels = torch.tensor([1, 0, -1, 1, 0])
    expected = _detection_reference(logits, deltas, labels, targets)
    assert float(detection_loss(logits, deltas, labels, targets)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_detection_loss_random_inputs(seed):
    logits, deltas, labels, targets = _random_detection_inputs(seed)
    expected = _detection_reference(logits, deltas, labels, targets)
    loss = detection_loss(logits, deltas, labels, targets)
    assert math.isfinite(float(loss))
    assert float(loss) >= 0.0
    assert float(loss) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_detection_loss_gradients():
    logits, deltas, labels, targets = _random_detection_inputs(7)
    logits.requires_grad_(True)
    deltas.requires_grad_(True)
    assert gradcheck(lambda z, d: detection_loss(z, d, labels, targets), (logits, deltas))


def test_detection_loss_ignored_proposals_get_no_gradient():
    logits = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    deltas = torch.ones(3, 4, dtype=torch.float64, requires_grad=True)
    detection_loss(logits, deltas, torch.tensor([1, -1, 0]), torch.zeros(3, 4, dtype=torch.float64)).backward()
    assert float(logits.grad[1]) == 0.0
    assert float(deltas.grad[1].abs().sum()) == 0.0
    # background proposals are classified but never regressed
    assert float(logits.grad[2]) != 0.0
    assert float(deltas.grad[2].abs().sum()) == 0.0


def test_detection_loss_without_labeled_proposals_warns_and_returns_zero():
    loss = detection_loss(torch.zeros(2), torch.zeros(2, 4), torch.tensor([-1, -1]), torch.zeros(2, 4))
    assert float(loss) == 0.0
    assert LOSS_WARNINGS["detection_no_labeled_proposals"] == 1


# ---------------------------------------------------------------- alignment

def test_sra_obj_equal_similarities_gives_ln2_per_region():
    t_fore = torch.tensor([1.0, 0.0], dtype=torch.float64)
    t_back = torch.tensor([0.0, 1.0], dtype=torch.float64)
    vectors = torch.tensor([[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]], dtype=torch.float64)
    labels = torch.tensor([1, 0, 1])
    loss = sra_obj_loss(vectors, labels, t_fore, t_back)
    assert float(loss) == pytest.approx(3 * LN2, abs=1e-9)
    assert float(sra_obj_loss(vectors, labels, t_fore, t_back, normalize=True)) == pytest.approx(LN2, abs=1e-9)


def test_sra_obj_matches_formula():
    g = torch.Generator().manual_seed(0)
    vectors = torch.randn(3, 6, generator=g, dtype=torch.float64)
    t_fore = torch.randn(6, generator=g, dtype=torch.float64)
    t_back = torch.randn(6, generator=g, dtype=torch.float64)
    labels = torch.tensor([1, 0, 1])

    expected = 0.0
    for f, c in zip(vectors, labels.tolist()):
        s1 = float(F.cosine_similarity(f, t_fore, dim=0))
        s2 = float(F.cosine_similarity(f, t_back, dim=0))
        sc = s1 if c == 1 else s2
        expected += -math.log(math.exp(sc) / (math.exp(s1) + math.exp(s2)))
    assert float(sra_obj_loss(vectors, labels, t_fore, t_back)) == pytest.approx(expected, abs=1e-9)


def test_sra_obj_empty_batch():
    loss = sra_obj_loss(torch.zeros(0, 4), torch.zeros(0, dtype=torch.long), torch.ones(4), -torch.ones(4))
    assert float(loss) == 0.0


def test_sra_id_single_identity_is_zero():
    vectors = torch.randn(4, 8, dtype=torch.float64)
    identities = torch.ones(4, dtype=torch.long)
    texts = torch.randn(1, 8, dtype=torch.float64)
    assert float(sra_id_loss(vectors, identities, texts)) == 0.0


def test_sra_id_saturates_for_collinear_features():
    texts = torch.eye(3, dtype=torch.float64)
    vectors = texts[[0, 2]] * 5.0
    identities = torch.tensor([1, 3])
    assert float(sra_id_loss(vectors, identities, texts, logit_scale=1000.0)) < 1e-12


def test_sra_id_matches_softmax_oracle():
    g = torch.Generator().manual_seed(1)
    texts = F.normalize(torch.randn(4, 5, generator=g, dtype=torch.float64), dim=1)
    vectors = F.normalize(torch.randn(2, 5, generator=g, dtype=torch.float64), dim=1)
    identities = torch.tensor([2, 4])
    scale = 10.0

    expected = 0.0
    for f, y in zip(vectors, identities.tolist()):
        logits = [scale * float(f @ t) for t in texts]
        expected += -(logits[y - 1] - math.log(sum(math.exp(v) for v in logits)))
    assert float(sra_id_loss(vectors, identities, texts, logit_scale=scale)) == pytest.approx(expected, abs=1e-9)


def test_sra_id_rejects_identity_without_prompt():
    with pytest.raises(ContractError):
        sra_id_loss(torch.randn(1, 4), torch.tensor([5]), torch.randn(3, 4))


def test_sra_id_skips_unlabeled_rows():
    texts = torch.randn(2, 4, dtype=torch.float64)
    vectors = torch.randn(3, 4, dtype=torch.float64)
    with_unlabeled = sra_id_loss(vectors, torch.tensor([1, 0, 2]), texts)
    without = sra_id_loss(vectors[[0, 2]], torch.tensor([1, 2]), texts)
    assert float(with_unlabeled) == pytest.approx(float(without), abs=1e-12)
    assert LOSS_WARNINGS["sra_id_unlabeled_skipped"] == 1


def _sra_obj_reference(vectors, labels, t_fore, t_back):
    total = 0.0
    for f, c in zip(vectors, labels.tolist()):
        s1 = float(F.cosine_similarity(f, t_fore, dim=0))
        s2 = float(F.cosine_similarity(f, t_back, dim=0))
        total += math.log(math.exp(s1) + math.exp(s2)) - (s1 if c == 1 else s2)
    return total


def _sra_id_reference(vectors, identities, texts, scale):
    total = 0.0
    for f, y in zip(vectors, identities.tolist()):
        if y == 0:
            continue
        logits = [scale * float(F.cosine_similarity(f, t, dim=0)) for t in texts]
        top = max(logits)
        total += top + math.log(sum(math.exp(v - top) for v in logits)) - logits[y - 1]
    return total


@pytest.mark.parametrize("seed", range(20))
def test_sra_obj_random_inputs(seed):
    g = torch.Generator().manual_seed(100 + seed)
    n, k = int(torch.randint(1, 7, (1,), generator=g)), int(torch.randint(2, 9, (1,), generator=g))
    vectors = torch.randn(n, k, generator=g, dtype=torch.float64)
    labels = torch.randint(0, 2, (n,), generator=g)
    t_fore = torch.randn(k, generator=g, dtype=torch.float64)
    t_back = torch.randn(k, generator=g, dtype=torch.float64)
    expected = _sra_obj_reference(vectors, labels, t_fore, t_back)
    assert float(sra_obj_loss(vectors, labels, t_fore, t_back)) == pytest.approx(expected, abs=1e-9)
    assert float(sra_obj_loss(vectors, labels, t_fore, t_back, normalize=True)) == pytest.approx(expected / n, abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_sra_obj_swapping_labels_and_prompts_is_symmetric(seed):
    g = torch.Generator().manual_seed(200 + seed)
    vectors = torch.randn(5, 6, generator=g, dtype=torch.float64)
    labels = torch.randint(0, 2, (5,), generator=g)
    t_fore = torch.randn(6, generator=g, dtype=torch.float64)
    t_back = torch.randn(6, generator=g, dtype=torch.float64)
    loss = sra_obj_loss(vectors, labels, t_fore, t_back)
    mirrored = sra_obj_loss(vectors, 1 - labels, t_back, t_fore)
    assert float(mirrored) == pytest.approx(float(loss), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_sra_id_random_inputs(seed):
    g = torch.Generator().manual_seed(300 + seed)
    m, k, c = 6, int(torch.randint(2, 9, (1,), generator=g)), int(torch.randint(1, 6, (1,), generator=g))
    vectors = torch.randn(m, k, generator=g, dtype=torch.float64)
    identities = torch.randint(0, c + 1, (m,), generator=g)
    identities[0] = c
    texts = torch.randn(c, k, generator=g, dtype=torch.float64)
    scale = float(torch.rand(1, generator=g)) * 50.0 + 1.0
    expected = _sra_id_reference(vectors, identities, texts, scale)
    assert float(sra_id_loss(vectors, identities, texts, logit_scale=scale)) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_sra_id_is_invariant_to_shifted_logits(seed):
    # the log-sum-exp is computed relative to the row maximum, so logits in
    # the thousands give the same loss as the max-shifted reference
    g = torch.Generator().manual_seed(400 + seed)
    vectors = torch.randn(4, 5, generator=g, dtype=torch.float64)
    texts = torch.randn(3, 5, generator=g, dtype=torch.float64)
    identities = torch.randint(1, 4, (4,), generator=g)
    loss = sra_id_loss(vectors, identities, texts, logit_scale=5000.0)
    assert math.isfinite(float(loss))
    assert float(loss) == pytest.approx(_sra_id_reference(vectors, identities, texts, 5000.0), rel=1e-9, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_sra_id_ignores_feature_scale_and_prompt_order(seed):
    g = torch.Generator().manual_seed(500 + seed)
    vectors = torch.randn(4, 5, generator=g, dtype=torch.float64)
    texts = torch.randn(4, 5, generator=g, dtype=torch.float64)
    identities = torch.randint(1, 5, (4,), generator=g)
    loss = float(sra_id_loss(vectors, identities, texts, logit_scale=10.0))

    scaled = sra_id_loss(vectors * 7.5, identities, texts * 0.2, logit_scale=10.0)
    assert float(scaled) == pytest.approx(loss, abs=1e-9)

    order = torch.randperm(4, generator=g)
    relabel = torch.empty_like(order)
    relabel[order] = torch.arange(4)
    permuted = sra_id_loss(vectors, relabel[identities - 1] + 1, texts[order], logit_scale=10.0)
    assert float(permuted) == pytest.approx(loss, abs=1e-9)


# ----------------------------------------------------------- identification

def test_multi_id_targets_drops_locations():
    targets = multi_id_targets([[1, 3, 3, 0], []], num_identities=4)
    assert targets.tolist() == [[1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
    with pytest.raises(ContractError):
        multi_id_targets([[5]], num_identities=4)


def test_mil_img_exact_prediction_is_zero():
    targets = torch.tensor([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]], dtype=torch.float64)
    assert float(mil_img_loss(targets.clone(), targets)) == 0.0


def test_mil_img_half_probability_is_ln2_per_frame():
    targets = torch.tensor([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]], dtype=torch.float64)
    probs = torch.full_like(targets, 0.5)
    assert float(mil_img_loss(probs, targets)) == pytest.approx(2 * LN2, abs=1e-9)


def test_mil_img_matches_bce_oracle():
    g = torch.Generator().manual_seed(2)
    probs = torch.rand(3, 5, generator=g, dtype=torch.float64) * 0.98 + 0.01
    targets = (torch.rand(3, 5, generator=g, dtype=torch.float64) > 0.5).double()
    expected = 0.0
    for p_row, c_row in zip(probs.tolist(), targets.tolist()):
        expected += sum(-(c * math.log(p) + (1 - c) * math.log(1 - p)) for p, c in zip(p_row, c_row)) / 5
    assert float(mil_img_loss(probs, targets)) == pytest.approx(expected, abs=1e-9)


def test_mil_box_one_hot_is_zero():
    probs = torch.eye(3, dtype=torch.float64)
    assert float(mil_box_loss(probs, torch.tensor([1, 2, 3]))) == 0.0


def test_mil_box_uniform_is_ln_c_per_box():
    probs = torch.full((2, 6), 1.0 / 6.0, dtype=torch.float64)
    assert float(mil_box_loss(probs, torch.tensor([1, 4]))) == pytest.approx(2 * math.log(6), abs=1e-9)


def test_mil_box_matches_ce_oracle():
    g = torch.Generator().manual_seed(4)
    probs = torch.softmax(torch.randn(3, 6, generator=g, dtype=torch.float64), dim=1)
    identities = torch.tensor([6, 1, 3])
    expected = sum(-math.log(float(probs[i, y - 1])) for i, y in enumerate(identities.tolist()))
    assert float(mil_box_loss(probs, identities)) == pytest.approx(expected, abs=1e-9)


def test_mil_box_skips_unlabeled_boxes():
    probs = torch.full((2, 3), 1.0 / 3.0, dtype=torch.float64)
    loss = mil_box_loss(probs, torch.tensor([0, 2]))
    assert float(loss) == pytest.approx(math.log(3), abs=1e-9)
    assert LOSS_WARNINGS["mil_box_unlabeled_skipped"] == 1


def test_mil_fea_equal_features_is_zero():
    f = torch.randn(4, 8, dtype=torch.float64)
    assert float(mil_fea_loss(f, f.clone())) == 0.0


def test_mil_fea_constant_shift_is_linear():
    g = torch.randn(3, 5, dtype=torch.float64)
    eps = 0.25
    assert float(mil_fea_loss(g + eps, g)) == pytest.approx(3 * 5 * eps, abs=1e-9)


def test_mil_fea_teacher_gets_no_gradient():
    student = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    teacher = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    mil_fea_loss(student, teacher).backward()
    assert student.grad is not None
    assert teacher.grad is None


def test_mil_fea_dimension_mismatch():
    with pytest.raises(ContractError):
        mil_fea_loss(torch.zeros(2, 4), torch.zeros(2, 5))


@pytest.mark.parametrize("seed", range(20))
def test_identification_losses_random_inputs(seed):
    g = torch.Generator().manual_seed(600 + seed)
    t, c = int(torch.randint(1, 5, (1,), generator=g)), int(torch.randint(2, 7, (1,), generator=g))
    probs = torch.rand(t, c, generator=g, dtype=torch.float64) * 0.98 + 0.01
    targets = (torch.rand(t, c, generator=g) > 0.5).double()
    expected = 0.0
    for p_row, c_row in zip(probs.tolist(), targets.tolist()):
        expected += sum(-(y * math.log(p) + (1 - y) * math.log(1 - p)) for p, y in zip(p_row, c_row)) / c
    assert float(mil_img_loss(probs, targets)) == pytest.approx(expected, abs=1e-9)

    box_probs = torch.softmax(torch.randn(t, c, generator=g, dtype=torch.float64), dim=1)
    identities = torch.randint(1, c + 1, (t,), generator=g)
    expected = sum(-math.log(float(box_probs[i, y - 1])) for i, y in enumerate(identities.tolist()))
    assert float(mil_box_loss(box_probs, identities)) == pytest.approx(expected, abs=1e-9)

    student = torch.randn(t, c, generator=g, dtype=torch.float64)
    teacher = torch.randn(t, c, generator=g, dtype=torch.float64)
    expected = sum(abs(a - b) for s_row, t_row in zip(student.tolist(), teacher.tolist()) for a, b in zip(s_row, t_row))
    assert float(mil_fea_loss(student, teacher)) == pytest.approx(expected, abs=1e-9)
    assert float(mil_fea_loss(student, teacher, normalize=True)) == pytest.approx(expected / t, abs=1e-9)


# ------------------------------------------------------------------ gradients

def test_alignment_and_identification_gradients():
    g = torch.Generator().manual_seed(5)
    vectors = torch.randn(3, 4, generator=g, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([1, 0, 1])
    t_fore = torch.randn(4, generator=g, dtype=torch.float64)
    t_back = torch.randn(4, generator=g, dtype=torch.float64)
    assert gradcheck(lambda v: sra_obj_loss(v, labels, t_fore, t_back), (vectors,))

    texts = torch.randn(3, 4, generator=g, dtype=torch.float64)
    assert gradcheck(lambda v: sra_id_loss(v, torch.tensor([1, 3, 2]), texts, logit_scale=5.0), (vectors,))

    logits = torch.randn(2, 3, generator=g, dtype=torch.float64, requires_grad=True)
    targets = torch.tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
    assert gradcheck(lambda x: mil_img_loss(torch.sigmoid(x), targets), (logits,))
    assert gradcheck(lambda x: mil_box_loss(torch.softmax(x, dim=1), torch.tensor([2, 3])), (logits,))

    # keep away from the L1 kink
    student = torch.tensor([[0.5, -0.7], [1.3, 0.2]], dtype=torch.float64, requires_grad=True)
    teacher = torch.zeros(2, 2, dtype=torch.float64)
    assert gradcheck(lambda s: mil_fea_loss(s, teacher), (student,))


# ----------------------------------------------------------------------- total

def test_total_of_zeros():
    assert float(total_loss({}).total) == 0.0


def test_total_is_plain_sum():
    parts = dict(det=1.0, reid=2.0, sra_obj=0.5, sra_id=0.5, mil_img=0.1, mil_box=0.2, mil_fea=0.3)
    assert float(total_loss(parts).total) == pytest.approx(4.6, abs=1e-12)


def test_total_recomposes_tensor_components():
    g = torch.Generator().manual_seed(6)
    parts = {name: torch.rand((), generator=g, dtype=torch.float64) for name in
             ("det", "reid", "sra_obj", "sra_id", "mil_img", "mil_box", "mil_fea")}
    bundle = total_loss(parts)
    assert float(bundle.total) == pytest.approx(sum(float(v) for v in parts.values()), abs=1e-9)


def test_disabled_components_report_zero():
    parts = dict(det=1.0, reid=2.0, sra_obj=0.5, sra_id=0.5, mil_img=0.1, mil_box=0.2, mil_fea=0.3)
    bundle = total_loss(parts, LossToggles.ablation("baseline"))
    assert float(bundle.total) == pytest.approx(3.0)
    assert bundle.as_floats()["sra_obj"] == 0.0
    assert bundle.as_floats()["mil_fea"] == 0.0


def test_non_finite_component_names_itself():
    with pytest.raises(TrainingStepError) as exc:
        total_loss({"det": 1.0, "mil_box": float("inf")}, step=12)
    assert exc.value.component == "mil_box"
    assert exc.value.step == 12


def test_ablation_presets():
    assert LossToggles.ablation("full") == LossToggles()
    assert LossToggles.ablation("sra").model_dump() == dict(
        sra_obj=True, sra_id=True, mil_img=False, mil_box=False, mil_fea=False
    )
    with pytest.raises(ValueError):
        LossToggles.ablation("nope")
