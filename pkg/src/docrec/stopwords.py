"""Built-in English stopword list.

Pinned so that key-phrase extraction and index contents are reproducible;
a deployment can override it with a file (one word per line, `#` comments).
"""

from __future__ import annotations

from pathlib import Path

ENGLISH_STOPWORDS = frozenset("""
a about above after again against ain all am an and any are aren as at
be because been before being below between both but by
can cannot could couldn
d did didn do does doesn doing don down during
each
few for from further
had hadn has hasn have haven having he her here hers herself him himself his
how
i if in into is isn it its itself
just
let ll
m ma may me might mightn more most must mustn my myself
needn no nor not now
o of off on once only onto or other ought our ours ourselves out over own
re
s same shall shan she should shouldn so some such
t than that the their theirs them themselves then there these they this those
through to too
under until up upon
ve very via
was wasn we were weren what when where whether which while who whom why will
with within without won would wouldn
y you your yours yourself yourselves
""".split())


def load_stopwords(path: str | Path | None) -> frozenset[str]:
    """Load a stopword list from a file, or the built-in list when no path."""
    if path is None:
        return ENGLISH_STOPWORDS
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word and not word.startswith("#"):
            words.add(word)
    return frozenset(words)
