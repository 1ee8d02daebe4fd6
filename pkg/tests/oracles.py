"""Independent reference implementations used to check the package.

Nothing here imports scopeguard internals except plain data types; each
oracle re-derives its answer from first principles with the standard library
(or ``cryptography`` for hashing).
"""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from cryptography.hazmat.primitives import hashes

_B64URL = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"


# PKCE ------------------------------------------------------------------------


def b64url_nopad(data: bytes) -> str:
    out = []
    for i in range(0, len(data), 3):
        chunk = data[i:i + 3]
        n = int.from_bytes(chunk + b"\0" * (3 - len(chunk)), "big")
        chars = [_B64URL[(n >> s) & 63] for s in (18, 12, 6, 0)]
        out.extend(chars[: len(chunk) + 1])
    return "".join(out)


def pkce_s256(verifier: str) -> str:
    h = hashes.Hash(hashes.SHA256())
    h.update(verifier.encode("ascii"))
    return b64url_nopad(h.finalize())


# hash embedding --------------------------------------------------------------


def tokens(text: str) -> List[str]:
    """Maximal runs of [a-z0-9] after lower-casing, walking characters by hand."""
    out, cur = [], []
    for ch in text.lower() + " ":
        if ("a" <= ch <= "z") or ("0" <= ch <= "9"):
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    fixed = []
    for tok in out:
        if len(tok) > 3 and tok[-1] == "s" and tok[-2] != "s":
            tok = tok[:-1]
        fixed.append(tok)
    if not fixed and text.strip():
        fixed.append(text.strip())
    return fixed


@lru_cache(maxsize=None)
def _token_vector(tok: str, dim: int, seed: int) -> Tuple[float, ...]:
    raw = hashlib.shake_256(f"{seed}:{tok}".encode("utf-8")).digest(4 * dim)
    return tuple(v / 4294967296.0 * 2.0 - 1.0 for v in struct.unpack(f"<{dim}I", raw))


def embed(text: str, dim: int = 256, seed: int = 0) -> List[float]:
    counts: Dict[str, int] = {}
    for tok in tokens(text):
        counts[tok] = counts.get(tok, 0) + 1
    acc = [0.0] * dim
    for tok in sorted(counts):
        k = counts[tok]
        for i, v in enumerate(_token_vector(tok, dim, seed)):
            acc[i] += k * v
    norm = math.sqrt(sum(x * x for x in acc))
    return [x / norm for x in acc]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return max(-1.0, min(1.0, dot / (na * nb)))


def extract_tool_block(completion: str) -> Optional[str]:
    start = completion.find("<tool_assistant>")
    end = completion.find("</tool_assistant>", start + 1)
    if start < 0 or end < 0:
        return None
    inner = completion[start + len("<tool_assistant>"):end].strip()
    if inner.lower().startswith("tool:"):
        inner = inner[5:].strip()
    return inner or None


def semsim_decision(ideal: str, requested: Tuple[str, str], available: Iterable[Tuple[str, str]],
                    threshold: float) -> Tuple[bool, float]:
    """(appropriate, score) by enumerating every similarity.

    ``requested`` and ``available`` are (name, description) pairs.
    """
    q = embed(ideal)
    sims = {}
    for name, desc in available:
        sims[name] = cosine(q, embed(desc or name))
    best = max(sims.values())
    winner = sorted(n for n, s in sims.items() if s == best)[0]
    score = sims[requested[0]]
    return (winner == requested[0] and best >= threshold), min(1.0, max(0.0, score))


# metrics ---------------------------------------------------------------------


def confusion(decisions: Sequence[bool], truths: Sequence[bool]) -> Dict[str, int]:
    c = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for d, t in zip(decisions, truths):
        key = ("t" if d == t else "f") + ("p" if d else "n")
        c[key] += 1
    return c


def metrics(c: Dict[str, int]) -> Dict[str, Optional[Fraction]]:
    def div(a, b):
        return Fraction(a, b) if b else None

    p = div(c["tp"], c["tp"] + c["fp"])
    r = div(c["tp"], c["tp"] + c["fn"])
    f1 = None
    if p is not None and r is not None and p + r > 0:
        f1 = 2 * p * r / (p + r)
    return {
        "accuracy": div(c["tp"] + c["tn"], sum(c.values())),
        "precision": p,
        "recall": r,
        "f1": f1,
        "fpr": div(c["fp"], c["fp"] + c["tn"]),
        "fnr": div(c["fn"], c["fn"] + c["tp"]),
    }


def best_threshold(scores: Sequence[float], labels: Sequence[bool],
                   eligible: Optional[Sequence[bool]] = None) -> Tuple[float, float]:
    """Try every distinct score as an inclusive threshold; smallest wins ties."""
    eligible = eligible or [True] * len(scores)
    best = None
    for t in sorted(set(scores)):
        preds = [e and s >= t for s, e in zip(scores, eligible)]
        c = confusion(preds, labels)
        denom = 2 * c["tp"] + c["fp"] + c["fn"]
        f1 = 2 * c["tp"] / denom if denom else 0.0
        if best is None or f1 > best[1]:
            best = (t, f1)
    return best
