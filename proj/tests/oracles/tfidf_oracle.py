#!/usr/bin/env python3
"""Writes tests/fixtures/tfidf_oracle.tsv: character 2-5-gram TF-IDF tables
for a few tiny corpora, computed by direct counting.

idf(t) = ln((1 + N) / (1 + df(t))) + 1; document vectors are raw counts
times idf, scaled to unit L2 norm; n-grams unseen at fit time are dropped.
"""

import math
import sys
from collections import Counter

CORPORA = [
    ("worked", ["ab", "abc"], ["ab", "abc", "zz", "", "abcab"]),
    ("spaces", ["abab", "ba", "abc ab"], ["abab", "ba", "abc ab", "b a", "ab ba"]),
    ("arabic", ["كلب", "كلب كبير", "قط", "كلب"], ["كلب", "كلب كبير", "قط", "كبير جدا"]),
    ("twins", ["aaa", "aaa"], ["aaa", "aa", "a"]),
]


def grams(text):
    out = Counter()
    for n in range(2, 6):
        for i in range(len(text) - n + 1):
            out[text[i:i + n]] += 1
    return out


def main(out):
    for name, docs, queries in CORPORA:
        df = Counter()
        for d in docs:
            df.update(set(grams(d)))
        n = len(docs)
        idf = {g: math.log((1 + n) / (1 + c)) + 1 for g, c in df.items()}
        out.write(f"corpus\t{name}\n")
        for d in docs:
            out.write(f"doc\t{d}\n")
        for g in sorted(idf):
            out.write(f"idf\t{g}\t{idf[g]!r}\n")
        for qi, q in enumerate(queries):
            out.write(f"query\t{q}\n")
            w = {g: c * idf[g] for g, c in grams(q).items() if g in idf}
            norm = math.sqrt(sum(v * v for v in w.values()))
            for g in sorted(w):
                out.write(f"vec\t{qi}\t{g}\t{w[g] / norm!r}\n")
        out.write("end\n")


if __name__ == "__main__":
    main(sys.stdout)
