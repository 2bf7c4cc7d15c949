"""Preference-pair embeddings: hashing encoder plus the fusion layer.

A preference pair (prompt, response_a, response_b) becomes a single context
vector: each prompt||response is hashed into a unit vector, and a one-layer
MLP fuses [e + e'; |e - e'|].  The fusion input is symmetric, so swapping
the two responses cannot change the context, and everything is
deterministic, so embeddings can be cached to JSONL and reloaded exactly.
"""

import tempfile

import numpy as np

from rmrouter import (
    FusionParams,
    PreferencePair,
    embed_pair,
    encode_text,
    load_embeddings,
    save_embeddings,
)

rng = np.random.default_rng(1)

vec = encode_text("How do I reverse a list in Python?")
print(f"encoder output: dim={len(vec)}, l2 norm={np.linalg.norm(vec):.12f}")
print(f"deterministic: {np.array_equal(vec, encode_text('How do I reverse a list in Python?'))}")

params = FusionParams.random_init(out_dim=16, encoder_dim=256, rng=rng)
pair = PreferencePair(
    pair_id="demo-0",
    prompt="How do I reverse a list in Python?",
    response_a="Use the reverse() method or slicing with [::-1].",
    response_b="You cannot reverse lists in Python.",
)
swapped = PreferencePair(
    pair_id="demo-0-swapped",
    prompt=pair.prompt,
    response_a=pair.response_b,
    response_b=pair.response_a,
)
h = embed_pair(pair, params)
h_swapped = embed_pair(swapped, params)
print(f"fused context: dim={h.d}, first entries {np.round(h.vector[:4], 4)}")
print(f"response-swap symmetry holds exactly: {np.array_equal(h.vector, h_swapped.vector)}")

with tempfile.NamedTemporaryFile(suffix=".jsonl") as tmp:
    save_embeddings(tmp.name, {"demo-0": h})
    reloaded = load_embeddings(tmp.name)
    print(f"jsonl round-trip bitwise identical: "
          f"{np.array_equal(reloaded['demo-0'].vector, h.vector)}")
