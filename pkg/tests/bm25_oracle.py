"""Direct per-token BM25 / BM25L evaluation written independently of ethtlm.masking."""
import math


def oracle_scores(corpus, doc, z1=1.2, b=0.75, delta=0.5, variant="bm25l"):
    """corpus and doc are lists of token ids without [CLS]."""
    n = len(corpus)
    avgdl = sum(len(d) for d in corpus) / n or 1.0
    out = []
    for tok in doc:
        df = sum(1 for d in corpus if tok in d)
        idf = math.log(n / (df + 1))
        f = doc.count(tok)
        k = 1 - b + b * len(doc) / avgdl
        if variant == "bm25":
            s = idf * f * (z1 + 1) / (f + z1 * k)
        else:
            c = f / k
            s = idf * (c + delta) * (z1 + 1) / (c + delta + z1)
        out.append(s if s > 0 else 0.0)
    return out
