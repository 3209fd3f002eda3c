#!/usr/bin/env python3
"""Independent brute-force TF-IDF cosine evaluator.

Used to derive the frozen expected values in the test suite. Deliberately
self-contained: tokenization is whitespace split (the toy corpus needs no
normalization) and the weighting formulas are written out longhand:

    tf(t, d)  = count(t, d) / sum_k count(k, d)
    idf(t)    = ln(N / (1 + df(t))), clamped below at 0
    w(t, d)   = tf(t, d) * idf(t)
    cos(a, b) = sum_t w(t,a)w(t,b) / (||w(a)|| * ||w(b)||)

Run:  python scripts/tfidf_oracle.py
"""

import math

TOY_CORPUS = {
    "d1": "red fox",
    "d2": "red dog",
    "d3": "blue cat",
    "d4": "green bird",
}


def doc_weights(docs):
    n = len(docs)
    df = {}
    for text in docs.values():
        for term in set(text.split()):
            df[term] = df.get(term, 0) + 1
    weights = {}
    for key, text in docs.items():
        toks = text.split()
        counts = {}
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
        w = {}
        for t, c in counts.items():
            idf = math.log(n / (1 + df[t]))
            if idf < 0.0:
                idf = 0.0
            w[t] = (c / len(toks)) * idf
        weights[key] = w
    return weights


def cosine(wa, wb):
    dot = math.fsum(wa[t] * wb[t] for t in sorted(wa) if t in wb)
    na = math.sqrt(math.fsum(v * v for _, v in sorted(wa.items())))
    nb = math.sqrt(math.fsum(v * v for _, v in sorted(wb.items())))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def main():
    weights = doc_weights(TOY_CORPUS)
    pairs = [("d1", "d2"), ("d1", "d3"), ("d1", "d1"), ("d2", "d4")]
    for a, b in pairs:
        print(f"cos({a},{b}) = {cosine(weights[a], weights[b]):.17g}")


if __name__ == "__main__":
    main()
