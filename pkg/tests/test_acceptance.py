"""Acceptance criteria, one test per criterion, each printing a pass/fail line.

The lines are collected into an "acceptance criteria" section of the
pytest terminal summary.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import (PLANTED_HP, TOY, fd_gradients, heldout_ranks_ok, random_instance, relative_error,
                     tfidf_oracle, topic_purity, two_cluster_counts)
from trialrank import evaluate as ev
from trialrank import matfac, simrank, synth, text
from trialrank.config import load_config
from trialrank.lda import fit_lda
from trialrank.pca import fit_pca, inverse_transform, project
from trialrank.pipeline import TIMINGS, run_pipeline
from trialrank.ranking import rank
from trialrank.records import Corpus

from conftest import FIXTURES

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(record_property):
    def emit(number, name, ok, detail):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'} {name}: {detail}"
        print("\n" + line)
        record_property("criterion", line)
        assert ok, detail
    return emit


def test_criterion_1_gradients(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        U, J, V, K = (int(rng.integers(2, hi + 1)) for hi in (20, 15, 6, 4))
        model, R, links = random_instance(rng, U, J, V, K)
        worst = max(worst, relative_error(matfac.gradients(model, R, links), fd_gradients(model, R, links)))
    elapsed = time.perf_counter() - start
    report(1, "gradient correctness", worst <= 1e-4 and elapsed < 10,
           f"worst relative error {worst:.2e} (<= 1e-4), {elapsed:.1f}s (< 10s)")


def test_criterion_2_planted_recovery(report):
    start = time.perf_counter()
    recovered, worst_rmse = 0, 0.0
    for seed in range(20):
        pf = synth.planted_factors(U=30, J=20, V=8, K=3, seed=seed)
        model = matfac.fit(pf.R, pf.links, matfac.Hyperparams(**PLANTED_HP, seed=seed))
        rmse = float(model.trace[model.best_iteration])
        worst_rmse = max(worst_rmse, rmse)
        recovered += rmse <= 1e-2 and heldout_ranks_ok(model, pf.links, 0.1)
    elapsed = time.perf_counter() - start
    report(2, "planted-factor recovery", recovered >= 18 and elapsed < 60,
           f"{recovered}/20 seeds recovered (>= 18), worst RMSE {worst_rmse:.4f}, {elapsed:.1f}s (< 60s)")


def _shared_space_recalls(seed, n_train):
    tc = synth.topical_corpus(60, ("diabetes", "hypertension", "asthma"), reviews_per_topic=2,
                              links_per_review=14, topical_words=10, generic_words=20, off_topic_words=8,
                              shared_links=0.7, seed=seed)
    corpus = Corpus(tc.records)
    features = text.vectorize(list(corpus), text.build_vocabulary(list(corpus), min_df=2))
    # Seeded random train picks; see the ledger for why date order is not used here.
    rng = np.random.default_rng(seed + 100)
    assignments = {}
    for ls in tc.links:
        ids = rng.permutation(ls.included_trial_ids).tolist()
        assignments[ls.review_id] = (ids[:n_train], ids[n_train:])
    split = ev.explicit_split(assignments, corpus)
    cosine = {rs.review_id: simrank.rank_review(features, rs.review_id, rs.train) for rs in split.reviews}
    links = split.link_matrix(corpus.ids)
    model = matfac.fit(features, links, matfac.Hyperparams(k=10, learning_rate=0.05, max_iterations=3000,
                                                           seed=seed))
    mf = matfac.rank_all(model, links)
    return (ev.recall_at(ev.evaluate(mf, split).ranks(), 10),
            ev.recall_at(ev.evaluate(cosine, split).ranks(), 10))


def test_criterion_3_shared_space_benefit(report):
    nine = np.array([_shared_space_recalls(seed, 9) for seed in range(10)]).mean(axis=0)
    three = np.array([_shared_space_recalls(seed, 3) for seed in range(10)]).mean(axis=0)
    trend = "reversed or tied" if three[0] <= three[1] else "not reversed"
    report(3, "shared-space benefit", nine[0] > nine[1],
           f"9 train links: matfac recall@10 {nine[0]:.3f} > cosine {nine[1]:.3f} (mean of 10 seeds); "
           f"3 train links, logged only: matfac {three[0]:.3f} vs cosine {three[1]:.3f}, {trend}")


def test_criterion_4_random_ranking(report):
    start = time.perf_counter()
    ranks = np.random.default_rng(7).integers(1, ev.REFERENCE_CANDIDATES + 1, size=10_000)
    median = ev.median_rank(ranks)
    deviation = abs(median - ev.RANDOM_MEDIAN_RANK) / ev.RANDOM_MEDIAN_RANK
    elapsed = time.perf_counter() - start
    report(4, "random-ranking sanity", deviation <= 0.02 and elapsed < 5,
           f"median {median:.1f} vs {ev.RANDOM_MEDIAN_RANK} ({deviation:.2%} <= 2%), {elapsed:.2f}s (< 5s)")


def test_criterion_5_tfidf_oracle(report):
    vocab = text.build_vocabulary(TOY, min_df=1)
    got = text.vectorize(TOY, vocab).dense()
    expected = np.array(tfidf_oracle([d.split() for d in TOY], list(vocab.terms)))
    err = float(np.abs(got - expected).max())
    report(5, "tf-idf oracle equivalence", got.shape == expected.shape and err <= 1e-10,
           f"max abs difference {err:.1e} (<= 1e-10)")


def test_criterion_6_metric_suite(report):
    curve = ev.recall_curve([3, 40, 41, 900], ev.recall_grid(1000))
    values = [curve[n] for n in sorted(curve)]
    checks = {
        "recall@N monotone": values == sorted(values) and values[-1] == 1.0,
        "median of [1,2,3,4] = 2.5": ev.median_rank([1, 2, 3, 4]) == 2.5,
        "WSS single link at rank 1 of 100 = 0.99": abs(ev.wss_at_recall([1], 0.95, 100) - 0.99) < 1e-15,
        "ties by ascending id": rank({"b": 1.0, "a": 1.0, "c": 2.0}).ids() == ["c", "a", "b"]
                                 and rank({"a": 1.0, "c": 2.0, "b": 1.0}).ids() == ["c", "a", "b"],
    }
    failed = [k for k, ok in checks.items() if not ok]
    report(6, "metric suite", not failed, "all exact" if not failed else f"failed: {', '.join(failed)}")


def test_criterion_7_pca_lda(report):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2)) @ rng.normal(size=(2, 12))
    errors = []
    for data in (X, sp.csr_matrix(X)):
        model = fit_pca(data, 2)
        errors.append(float(np.abs(inverse_transform(model, project(model, data)) - X).max()))
    pure = sum(topic_purity(fit_lda(two_cluster_counts(seed), 2, sweeps=200, seed=seed)) for seed in range(10))
    report(7, "PCA/LDA checks", max(errors) <= 1e-8 and pure >= 9,
           f"rank-2 reconstruction error {max(errors):.1e} (<= 1e-8), LDA purity {pure}/10 seeds (>= 9)")


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != TIMINGS}


def test_criterion_8_end_to_end_determinism(report, tmp_path):
    cfg = load_config(FIXTURES / "config.yaml")
    a, b = _tree(run_pipeline(cfg, tmp_path / "a")), _tree(run_pipeline(cfg, tmp_path / "b"))
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    report(8, "end-to-end determinism", not differ and "manifest.json" in a,
           f"{len(a)} files byte-identical (timings.json excluded)" if not differ else f"differ: {differ}")
