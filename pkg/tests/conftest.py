import json

import pytest
from hypothesis import settings

from coderecall.corpus import Corpus, from_entries
from coderecall.rng import SplitMix64

settings.register_profile("ci", deadline=None, derandomize=True)
settings.load_profile("ci")

_NAMES = ["total", "scale", "merge", "index", "chunk", "width", "shift", "probe"]
_VERBS = ["clip", "fold", "score", "pack", "trim", "rank", "mask", "bump"]


def synth_function(rng: SplitMix64, name: str) -> str:
    """A plausible small function, sized like a typical corpus entry."""
    n_lines = rng.randint(6, 22)
    params = ", ".join(["items", "limit", "base"][: rng.randint(1, 3)])
    lines = [f"def {name}({params}):", "    out = []"]
    for i in range(n_lines):
        verb = rng.choice(_VERBS)
        const = rng.randint(1, 999)
        variant = rng.below(4)
        if variant == 0:
            lines.append(f"    v{i} = {verb}_{i} = {const} * len(out) + {rng.randint(1, 50)}")
        elif variant == 1:
            lines.append(f"    out.append(({const}, 'tag_{verb}{i}'))")
        elif variant == 2:
            lines.append(f"    if len(out) > {rng.randint(1, 9)}:")
            lines.append(f"        out = out[:{rng.randint(1, 9)}]")
        else:
            lines.append(f"    for idx_{i} in range({rng.randint(2, 20)}):")
            lines.append(f"        out.append(idx_{i} + {const})")
    lines.append("    return out")
    return "\n".join(lines)


def synth_corpus(n: int, seed: int = 1) -> Corpus:
    rng = SplitMix64(seed)
    pairs = []
    for i in range(n):
        name = f"{rng.choice(_NAMES)}_{rng.choice(_VERBS)}_{i}"
        pairs.append((f"fn-{i}", synth_function(rng, name)))
    return from_entries(pairs)


@pytest.fixture
def small_corpus() -> Corpus:
    return synth_corpus(40, seed=11)


def write_corpus_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in corpus.entries:
            fh.write(json.dumps({"id": entry.id, "source": entry.source}) + "\n")
