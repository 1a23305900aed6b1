import numpy as np
import pytest

from pledgespec.corpus import Corpus, Sentence


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_corpus(n: int = 24, doc_size: int = 6, labeled: bool = True,
                vocab: int = 40, seed: int = 0) -> Corpus:
    """Small deterministic corpus for structural tests."""
    r = np.random.default_rng(seed)
    sentences = []
    for i in range(n):
        tokens = tuple(f"w{r.integers(vocab)}" for _ in range(int(r.integers(3, 9))))
        sentences.append(Sentence(
            id=f"s{i:04d}",
            doc_id=f"d{i // doc_size:03d}",
            index_in_doc=i % doc_size,
            tokens=tokens,
            party="labor" if (i // doc_size) % 2 == 0 else "liberal",
            year=1990 + 3 * (i // (2 * doc_size)),
            label=int(r.integers(1, 8)) if labeled else None,
            policy_theme=int(r.integers(1, 58)),
        ))
    return Corpus(tuple(sentences))


@pytest.fixture
def small_corpus():
    return make_corpus()
