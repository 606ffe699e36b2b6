"""Regenerate the shipped fixture corpus: ``python fixtures/make_fixtures.py``."""

from pathlib import Path

from trialrank.records import write_links, write_records
from trialrank.synth import topical_corpus

HERE = Path(__file__).parent


def main() -> None:
    tc = topical_corpus(30, ("diabetes", "hypertension", "asthma"), links_per_review=8, seed=20240601)
    corpus_dir = HERE / "corpus"
    if corpus_dir.exists():
        for p in corpus_dir.glob("*.json"):
            p.unlink()
    write_records(tc.records, corpus_dir)
    write_links(tc.links, HERE / "links.csv")


if __name__ == "__main__":
    main()
