import pytest

from s2distill.backend import MockBackend, SamplingParams


@pytest.fixture
def params():
    return SamplingParams(temperature=0.0, top_p=1.0, max_tokens=256, seed=7)


@pytest.fixture
def echo_backend():
    """Mock that answers every prompt with a constant short text."""
    return MockBackend(lambda prompt, i: "ok")


def constant_token_backend(text="alpha beta gamma", **kwargs):
    """Every completion carries the same text, hence a constant token count."""
    return MockBackend(lambda prompt, i: text, **kwargs)
