"""Templated captions and a tiny fixed-vocabulary tokenizer.

Captions are generated from clip metadata, so the vocabulary is closed and
known at build time. Token 0 is <pad> (embeds to zero), token 1 is <unk>.
"""

from __future__ import annotations

import numpy as np

PAD_ID = 0
UNK_ID = 1

_WORDS = (
    ["a", "character", "with", "hair", "strands", "performing",
     "gentle", "sway", "vigorous", "shake", "slow", "nod", "windy", "drift",
     "scripted", "motion", "static",
     "scene", "of", "bouncing", "drifting", "moving", "shapes",
     "circle", "circles", "square", "squares", "triangle", "triangles",
     "left", "right", "up", "down", "fast"]
    + [str(n) for n in range(65)]
)

VOCAB = ["<pad>", "<unk>"] + _WORDS
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}

VOCAB_SIZE = len(VOCAB)
MAX_CAPTION_LEN = 16


def encode_caption(text: str | None, max_len: int = MAX_CAPTION_LEN) -> np.ndarray:
    """Tokenize to fixed-length id array; None or "" yields an all-pad row."""
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    if not text:
        return ids
    for i, w in enumerate(text.lower().split()[:max_len]):
        ids[i] = WORD_TO_ID.get(w, UNK_ID)
    return ids


def strand_caption(n_strands: int, motion_name: str) -> str:
    return f"a character with {n_strands} hair strands performing {motion_name}"


def shapes_caption(n_shapes: int, shape: str) -> str:
    return f"a scene of {n_shapes} bouncing {shape}s moving"
