"""Standalone reference for the hashed bag-of-words embedding.

Used once to pin the cosine regression constant in test_text_embed.cpp.
"""
import math
import re
import sys

MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


def tokenize(text):
    return [t for t in re.split(r"[^a-z0-9]+", text.lower()) if t]


def embed(text, dim=32):
    toks = tokenize(text)
    if not toks:
        raise ValueError("empty instruction")
    feats = toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
    v = [0.0] * dim
    for f in feats:
        h = fnv1a64(f.encode())
        v[h % dim] += -1.0 if (h >> 32) & 1 else 1.0
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def cosine(a, b):
    return sum(x * y for x, y in zip(a, b))


if __name__ == "__main__":
    a = sys.argv[1] if len(sys.argv) > 1 else "open the drawer"
    b = sys.argv[2] if len(sys.argv) > 2 else "close the drawer"
    print(repr(cosine(embed(a), embed(b))))
