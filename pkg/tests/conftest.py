import pytest

from distillrank import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_task():
    """Shared 200-doc synthetic task: (corpus, judgments, relevance)."""
    spec = SyntheticSpec(
        n_docs=200,
        n_queries=20,
        vocab_size=400,
        n_topics=8,
        seed=3,
        positive_fraction=0.02,
    )
    return generate_synthetic(spec)
