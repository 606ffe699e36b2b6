"""Synthetic data generators with planted structure, for tests and fixtures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matfac import LinkMatrix
from .records import RegistryRecord, ReviewLinkSet


@dataclass(frozen=True)
class PlantedFactors:
    P: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    R: np.ndarray
    links: LinkMatrix
    clusters: np.ndarray


def planted_factors(U=30, J=20, V=8, K=3, *, held_out=2, noise=0.2, seed=0) -> PlantedFactors:
    """Noise-free ``R = P Q^T`` with cluster-structured rank-``K`` factors.

    Trial ``u`` belongs to cluster ``u % K``; its factor row is the cluster
    indicator plus ``noise * Uniform(0, 1)`` on the other coordinates.
    Review ``v`` covers cluster ``v % K`` with an indicator factor row, so
    ``P W^T`` is exactly 1 on every link and below ``noise`` elsewhere. ``held_out``
    random links per review go to the test set.
    """
    rng = np.random.default_rng(seed)
    clusters = np.arange(U) % K
    onehot = np.eye(K)[clusters]
    P = onehot + noise * rng.uniform(size=(U, K)) * (1.0 - onehot)
    Q = rng.uniform(size=(J, K))
    W = np.eye(K)[np.arange(V) % K]
    R = P @ Q.T
    train, test = [], []
    for v in range(V):
        members = np.flatnonzero(clusters == v % K)
        held = set(rng.choice(members, size=held_out, replace=False).tolist())
        for u in members:
            (test if u in held else train).append((u, v))
    ids = tuple(f"T{u:03d}" for u in range(U))
    reviews = tuple(f"R{v:02d}" for v in range(V))
    return PlantedFactors(P, Q, W, R, LinkMatrix(ids, reviews, np.array(train), np.array(test)), clusters)


# ---------------------------------------------------------------------------
# Topical text corpora

TOPIC_WORDS = {
    "diabetes": "metformin insulin glycemic glucose hba1c sitagliptin sulfonylurea glimepiride "
                "pioglitazone liraglutide exenatide hypoglycemia pancreatic incretin dpp4".split(),
    "hypertension": "blood pressure amlodipine losartan systolic diastolic hypertensive antihypertensive "
                    "valsartan lisinopril diuretic chlorthalidone vascular renin aldosterone".split(),
    "asthma": "asthma inhaled bronchial salmeterol fluticasone budesonide wheeze airway spirometry "
              "exacerbation montelukast bronchodilator eosinophilic corticosteroid lung".split(),
    "oncology": "tumor chemotherapy carcinoma metastatic oncology docetaxel cisplatin radiotherapy "
                "progression lymphoma biopsy malignant neoplasm paclitaxel remission".split(),
    "depression": "depression antidepressant sertraline fluoxetine mood anxiety psychiatric serotonin "
                  "escitalopram cognitive psychotherapy suicidal hamilton venlafaxine bipolar".split(),
    "arthritis": "arthritis rheumatoid methotrexate joint synovial inflammatory adalimumab etanercept "
                 "tocilizumab cartilage osteoarthritis swelling tenderness sacroiliac biologic".split(),
}

GENERIC_WORDS = ("randomized controlled trial patients study treatment placebo efficacy safety dose "
                 "participants week baseline outcome primary secondary adverse events group daily "
                 "clinical visit assessment month screening eligible years informed consent").split()


@dataclass(frozen=True)
class TopicalCorpus:
    records: tuple[RegistryRecord, ...]
    topics: tuple[str, ...]  # per record
    links: tuple[ReviewLinkSet, ...]


def _sentence(rng, pool, n):
    return " ".join(rng.choice(pool, size=n).tolist())


def topical_corpus(
    n_docs=30,
    topics=("diabetes", "hypertension", "asthma"),
    *,
    reviews_per_topic=1,
    links_per_review=8,
    topical_words=12,
    generic_words=20,
    off_topic_words=4,
    shared_links=0.0,
    seed=0,
) -> TopicalCorpus:
    """Registry-like records with planted topics and review links.

    Documents are assigned to topics round-robin. Each document mixes words
    from its topic, generic trial vocabulary, and a few words from random
    other topics. Reviews on a topic link to ``links_per_review`` of that
    topic's documents; ``shared_links`` is the probability that a link of a
    review is re-used by the next review on the same topic.
    """
    rng = np.random.default_rng(seed)
    all_topic_words = [w for t in topics for w in TOPIC_WORDS[t]]
    doc_topics = [topics[i % len(topics)] for i in range(n_docs)]
    records = []
    for i, topic in enumerate(doc_topics):
        pool = TOPIC_WORDS[topic]
        others = [w for w in all_topic_words if w not in pool]
        year = 2004 + int(rng.integers(0, 13))
        month = 1 + int(rng.integers(0, 12))
        records.append(RegistryRecord(
            id=f"NCT{10000000 + i * 7919:08d}",
            brief_title=f"{_sentence(rng, pool, 3)} {_sentence(rng, GENERIC_WORDS, 2)}",
            official_title=f"{_sentence(rng, GENERIC_WORDS, 4)} {_sentence(rng, pool, 3)}",
            detailed_description=" ".join([
                _sentence(rng, pool, max(topical_words - 8, 1)),
                _sentence(rng, GENERIC_WORDS, generic_words),
                _sentence(rng, others, off_topic_words) if off_topic_words and others else "",
            ]).strip(),
            inclusion_criteria=f"adults aged 18 {_sentence(rng, pool, 2)} {_sentence(rng, GENERIC_WORDS, 4)}",
            intervention_names=(rng.choice(pool).item(), "placebo"),
            completion_date=f"{year:04d}-{month:02d}",
            status="Completed",
        ))

    links = []
    for t_idx, topic in enumerate(topics):
        members = [r.id for r, t in zip(records, doc_topics) if t == topic]
        previous: list[str] = []
        for j in range(reviews_per_topic):
            n = min(links_per_review, len(members))
            chosen = [m for m in previous if rng.random() < shared_links][:n]
            rest = [m for m in rng.permutation(members).tolist() if m not in chosen]
            chosen += rest[: n - len(chosen)]
            previous = chosen
            links.append(ReviewLinkSet(f"SR{t_idx:02d}{j:02d}", tuple(sorted(chosen))))
    return TopicalCorpus(tuple(records), tuple(doc_topics), tuple(links))
