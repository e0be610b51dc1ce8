import math

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

from src.encoder import DTYPE, build_layout, encode_set_tokens
from src.errors import CheckpointMismatchError, ConfigurationError, ContractViolation
from src.oracle import OracleLabels
from src.retriever import (
    CrossAttn,
    FilterHead,
    LatentQuerySet,
    PairSampler,
    bpr,
    build_model,
    filtering_loss,
    infer_scores,
    load_checkpoint,
    model_fingerprint,
    ranking_loss,
    refine_edus,
    save_checkpoint,
    score_relevance,
    score_salience,
    select_queries,
    total_loss,
)

LOG2 = math.log(2.0)


@pytest.fixture
def four_edu_labels():
    return OracleLabels(
        set_id="s",
        edu_salience=[(0, 0, 0.9), (0, 1, 0.5), (1, 0, 0.4), (1, 1, 0.1)],
        doc_ranking=[0, 1],
        k_q=1,
        k_f=1,
    )


def test_single_document_cross_attention_gives_identical_rows():
    torch.manual_seed(0)
    attn = CrossAttn(8)
    edus = torch.randn(5, 8, dtype=DTYPE)
    docs = torch.randn(1, 8, dtype=DTYPE)
    refined = refine_edus(edus, docs, attn)
    assert torch.allclose(refined, refined[0].expand_as(refined))

    attn.residual = True
    delta = refine_edus(edus, docs, attn) - edus
    assert torch.allclose(delta, delta[0].expand_as(delta))


def test_cross_attention_checks_widths():
    attn = CrossAttn(8)
    with pytest.raises(ContractViolation):
        refine_edus(torch.zeros(3, 8, dtype=DTYPE), torch.zeros(2, 4, dtype=DTYPE), attn)


def test_select_queries_breaks_ties_by_index():
    salience = torch.tensor([0.5, 0.9, 0.5, 0.9], dtype=DTYPE)
    refined = torch.arange(8, dtype=DTYPE).reshape(4, 2)
    ids = [(0, 0), (0, 1), (1, 0), (1, 1)]

    queries = select_queries(salience, refined, 3, ids)
    assert queries.source_rows == [1, 3, 0]
    assert queries.source_edu_ids == [(0, 1), (1, 1), (0, 0)]
    assert torch.equal(queries.queries, refined[[1, 3, 0]])

    assert select_queries(salience, refined, 10, ids).k == 4
    with pytest.raises(ConfigurationError):
        select_queries(salience, refined, 0, ids)


def test_query_gradients_flow_through_refined_rows_only():
    salience = torch.tensor([0.2, 0.7, 0.1], dtype=DTYPE, requires_grad=True)
    refined = torch.randn(3, 4, dtype=DTYPE, requires_grad=True)
    queries = select_queries(salience, refined, 1)
    queries.queries.sum().backward()
    assert salience.grad is None
    assert refined.grad[1].tolist() == [1.0] * 4
    assert refined.grad[0].tolist() == [0.0] * 4


def test_relevance_is_a_distribution_over_documents():
    docs = torch.randn(4, 6, dtype=DTYPE)
    queries = select_queries(torch.rand(5, dtype=DTYPE), torch.randn(5, 6, dtype=DTYPE), 3)
    scores = score_relevance(docs, queries)
    assert scores.per_query.shape == (4, 3)
    assert torch.allclose(scores.per_query.sum(dim=0), torch.ones(3, dtype=DTYPE))
    assert scores.aggregate.sum().item() == pytest.approx(1.0)

    single = score_relevance(docs[:1], queries)
    assert single.aggregate.tolist() == [1.0]


def test_bpr_values():
    scores = torch.tensor([2.0, 0.0], dtype=DTYPE)
    assert bpr(scores, [0], [1]).item() == pytest.approx(math.log1p(math.exp(-2.0)))
    assert bpr(scores, [1], [0]).item() == pytest.approx(math.log1p(math.exp(2.0)))
    assert bpr(scores, [], []).item() == 0.0


def test_pair_sampler():
    assert PairSampler().sample([0, 1], [2]) == ([0, 1], [2, 2])
    assert PairSampler().sample_ordered([2, 0, 1]) == ([2, 2, 0], [0, 1, 1])

    first = PairSampler(3, np.random.default_rng(5)).sample([0, 1], [2, 3, 4])
    second = PairSampler(3, np.random.default_rng(5)).sample([0, 1], [2, 3, 4])
    assert first == second
    pairs = list(zip(*first))
    assert len(pairs) == len(set(pairs)) == 3


def test_losses_at_uniform_scores(four_edu_labels):
    sampler = PairSampler()
    salience = torch.full((4,), 0.5, dtype=DTYPE)
    assert filtering_loss(salience, four_edu_labels, sampler).item() == pytest.approx(2 * LOG2)

    relevance = torch.tensor([0.5, 0.5], dtype=DTYPE)
    assert ranking_loss(relevance, four_edu_labels, sampler).item() == pytest.approx(LOG2)


def test_filtering_loss_rewards_correct_order(four_edu_labels):
    sampler = PairSampler()
    good = filtering_loss(torch.tensor([0.9, 0.5, 0.5, 0.1], dtype=DTYPE), four_edu_labels, sampler)
    bad = filtering_loss(torch.tensor([0.1, 0.5, 0.5, 0.9], dtype=DTYPE), four_edu_labels, sampler)
    assert good.item() < 2 * LOG2 < bad.item()


def test_total_loss_balance():
    rank_l = torch.tensor(1.5, dtype=DTYPE)
    filter_l = torch.tensor(0.5, dtype=DTYPE)
    assert total_loss(rank_l, filter_l, 0.0).item() == 1.5
    assert total_loss(rank_l, filter_l, 2.0).item() == 2.5
    with pytest.raises(ConfigurationError):
        total_loss(rank_l, filter_l, -1.0)


def test_initialisation_is_seeded():
    first = build_model(16, seed=3)
    second = build_model(16, seed=3)
    other = build_model(16, seed=4)
    for name, value in first.state_dict().items():
        assert torch.equal(value, second.state_dict()[name])
        assert value.abs().max().item() <= 0.25
    assert not torch.equal(first.filter_head.linear.weight, other.filter_head.linear.weight)


def test_forward_backward(toy_segmented, hash_encoder):
    model = build_model(16, seed=0)
    tokens = encode_set_tokens(toy_segmented, hash_encoder)
    output = model(tokens, build_layout(toy_segmented), k=4)

    assert output.salience.shape == (9,)
    assert torch.all((output.salience > 0) & (output.salience < 1))
    assert output.queries.k == 4
    assert output.relevance.aggregate.shape == (3,)

    output.relevance.aggregate[0].backward(retain_graph=True)
    assert model.cross_attn.query.weight.grad is not None
    assert torch.isfinite(model.span_pooler.hidden.weight.grad).all()

    with pytest.raises(ContractViolation):
        model(tokens[:, :8], build_layout(toy_segmented))


def test_infer_scores_is_deterministic(toy_segmented, hash_encoder):
    model = build_model(16, seed=0)
    model.train()
    first = infer_scores(model, toy_segmented, hash_encoder, k=3)
    second = infer_scores(model, toy_segmented, hash_encoder, k=3)

    assert model.training
    assert first.edu_salience.shape == (9,)
    assert np.array_equal(first.edu_salience, second.edu_salience)
    assert np.array_equal(first.doc_relevance, second.doc_relevance)
    assert first.doc_relevance.sum() == pytest.approx(1.0)
    assert first.edu_ids == toy_segmented.edu_ids


def test_checkpoint_round_trip_and_mismatch(tmp_path, toy_segmented, hash_encoder):
    model = build_model(16, seed=2, residual=True)
    fingerprint = model_fingerprint(model, 1024, hash_encoder.backend_id)
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(path, model, fingerprint, epoch=3, best_score=0.75)

    restored, payload = load_checkpoint(path, fingerprint)
    assert payload["epoch"] == 3
    assert payload["best_score"] == 0.75
    assert restored.cross_attn.residual is True
    original = infer_scores(model, toy_segmented, hash_encoder)
    reloaded = infer_scores(restored, toy_segmented, hash_encoder)
    assert np.array_equal(original.edu_salience, reloaded.edu_salience)

    wrong = dict(fingerprint, c=512)
    with pytest.raises(CheckpointMismatchError) as info:
        load_checkpoint(path, wrong)
    assert info.value.found == fingerprint

    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(tmp_path / "missing.pt")


def test_single_document_refines_every_edu_to_its_value_projection():
    torch.manual_seed(1)
    attn = build_model(8, seed=0).cross_attn
    edus = torch.randn(4, 8, dtype=DTYPE)
    doc = torch.randn(1, 8, dtype=DTYPE)

    refined = refine_edus(edus, doc, attn)
    expected = attn.output(attn.value(doc))
    assert torch.allclose(refined, expected.expand_as(refined))


@pytest.mark.parametrize("residual", [False, True])
def test_reordering_documents_leaves_refined_rows_unchanged(residual):
    torch.manual_seed(2)
    attn = CrossAttn(8, residual=residual)
    edus = torch.randn(5, 8, dtype=DTYPE)
    docs = torch.randn(4, 8, dtype=DTYPE)
    for _ in range(5):
        perm = torch.randperm(4)
        assert torch.allclose(refine_edus(edus, docs[perm], attn), refine_edus(edus, docs, attn))


def test_salience_of_hand_set_logits():
    head = FilterHead(2)
    with torch.no_grad():
        head.linear.weight.copy_(torch.tensor([[0.0, 0.0], [1.0, 0.0]], dtype=DTYPE))
        head.linear.bias.zero_()
    refined = torch.tensor([[2.0, 0.0], [0.0, 5.0]], dtype=DTYPE)

    salience = score_salience(refined, head)
    assert salience[0].item() == pytest.approx(math.exp(2) / (math.exp(2) + 1))
    assert salience[0].item() == pytest.approx(0.8808, abs=1e-4)
    assert salience[1].item() == pytest.approx(0.5)


def _queries(rows):
    queries = torch.tensor(rows, dtype=DTYPE)
    return LatentQuerySet(queries, [(0, i) for i in range(len(rows))], list(range(len(rows))))


def test_relevance_of_hand_set_dot_products():
    docs = torch.eye(2, dtype=DTYPE)
    single = score_relevance(docs, _queries([[1.0, 0.0]]))
    assert single.aggregate.tolist() == pytest.approx([0.7311, 0.2689], abs=1e-4)

    mirrored = score_relevance(docs, _queries([[1.0, 0.0], [0.0, 1.0]]))
    assert mirrored.aggregate.tolist() == pytest.approx([0.5, 0.5])


def test_relevance_ignores_a_shift_shared_by_all_documents():
    torch.manual_seed(3)
    docs = torch.randn(4, 6, dtype=DTYPE)
    queries = _queries(torch.randn(3, 6, dtype=DTYPE).tolist())
    # adding the same vector to every document shifts each query's dot products by a constant
    shifted = docs + torch.randn(6, dtype=DTYPE)

    before = score_relevance(docs, queries)
    after = score_relevance(shifted, queries)
    assert torch.allclose(before.per_query, after.per_query)
    assert torch.argsort(before.aggregate).tolist() == torch.argsort(after.aggregate).tolist()


def test_identical_documents_get_uniform_relevance(make_segmented, hash_encoder):
    text = "The cat sat on the mat, and it purred loudly. Dogs barked outside the house."
    segmented = make_segmented([text] * 3)
    result = infer_scores(build_model(16, seed=0), segmented, hash_encoder, k=3)
    assert result.doc_relevance.tolist() == pytest.approx([1 / 3] * 3, abs=1e-6)


@pytest.mark.parametrize("seed", range(50))
def test_loss_gradients_match_finite_differences(seed, make_random_instance):
    instance = make_random_instance(seed)
    labels = instance.labels
    edu_ids = instance.layout.edu_ids
    rng = np.random.default_rng(seed)
    salience = torch.tensor(rng.uniform(0, 1, len(edu_ids)), dtype=DTYPE, requires_grad=True)
    relevance = torch.softmax(torch.tensor(rng.normal(size=len(labels.doc_ranking)), dtype=DTYPE), 0)
    relevance.requires_grad_(True)
    sampler = PairSampler()

    assert gradcheck(lambda s: filtering_loss(s, labels, sampler, edu_ids), (salience,))
    assert gradcheck(lambda r: ranking_loss(r, labels, sampler), (relevance,))
    assert gradcheck(
        lambda s, r: total_loss(
            ranking_loss(r, labels, sampler), filtering_loss(s, labels, sampler, edu_ids), 0.7
        ),
        (salience, relevance),
    )


@pytest.mark.parametrize("seed", range(50))
def test_forward_gradients_match_finite_differences(seed, make_random_instance):
    instance = make_random_instance(seed)
    model = build_model(4, seed=seed)
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())
    sampler = PairSampler()
    k = min(3, instance.layout.num_edus)

    def objective(*values):
        output = functional_call(
            model, dict(zip(names, values)), (instance.tokens, instance.layout, k)
        )
        rank_l = ranking_loss(output.relevance.aggregate, instance.labels, sampler)
        filter_l = filtering_loss(
            output.salience, instance.labels, sampler, instance.layout.edu_ids
        )
        return total_loss(rank_l, filter_l, 1.0)

    assert gradcheck(objective, params)
