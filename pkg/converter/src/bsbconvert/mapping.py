"""Tensor name mapping between published BERT checkpoints and the native set.

The mapping is data, not code: a list of (source_name, native_name,
transpose) triples. Published checkpoints vary in ways that are only
visible once the file is open (an optional "bert." prefix, LayerNorm
parameters called weight/bias in newer exports and gamma/beta in older
ones), so the default table is derived from the actual source tensor
names rather than hard-coded.

Linear weights are transposed: torch stores them (out, in), the native
format stores them (in, out) so that a layer is x @ W + b.
"""

from __future__ import annotations


class MappingError(ValueError):
    """The default mapping cannot be derived from the source names."""


# Substrings identifying tensors the native format has no slot for. The
# pooler and the next-sentence head are outside the architecture; the
# position-id buffer is a constant; the decoder weight/bias are tied
# duplicates (convert() verifies the tie before agreeing to drop them).
DEFAULT_DROP_SUBSTRINGS = (
    "pooler",
    "seq_relationship",
    "position_ids",
    "predictions.decoder",
)


def default_drop_names(source_names) -> list[str]:
    """Source tensors the default policy drops, in source order."""
    return [n for n in source_names
            if any(sub in n for sub in DEFAULT_DROP_SUBSTRINGS)]


def _detect_prefix(source_names) -> str:
    return "bert." if any(n.startswith("bert.") for n in source_names) else ""


def _pick(candidates, present, native):
    hits = [c for c in candidates if c in present]
    if len(hits) != 1:
        state = "none" if not hits else "several"
        raise MappingError(
            f"{state} of the candidate source tensors for {native!r} exist: "
            f"{list(candidates)}"
        )
    return hits[0]


def default_bert_mapping(num_layers: int, source_names) -> list[tuple]:
    """Derive the (source, native, transpose) table for a BERT checkpoint.

    Raises MappingError when a native tensor has no source candidate or
    an ambiguous pair of them; extra source tensors are not this
    function's concern (convert() fails closed on those).
    """
    present = set(source_names)
    p = _detect_prefix(source_names)
    table: list[tuple] = []

    def norm(src_base: str, native_base: str):
        for hf, ours in (("weight", "gamma"), ("bias", "beta")):
            src = _pick((f"{src_base}.{hf}", f"{src_base}.{ours}"),
                        present, f"{native_base}.{ours}")
            table.append((src, f"{native_base}.{ours}", False))

    def linear(src_base: str, native_base: str):
        table.append((f"{src_base}.weight", f"{native_base}.weight", True))
        table.append((f"{src_base}.bias", f"{native_base}.bias", False))

    table.append((f"{p}embeddings.word_embeddings.weight", "embeddings.word", False))
    table.append((f"{p}embeddings.position_embeddings.weight", "embeddings.position", False))
    table.append((f"{p}embeddings.token_type_embeddings.weight", "embeddings.token_type", False))
    norm(f"{p}embeddings.LayerNorm", "embeddings.norm")
    for i in range(num_layers):
        src = f"{p}encoder.layer.{i}"
        dst = f"layer.{i}"
        linear(f"{src}.attention.self.query", f"{dst}.attn.query")
        linear(f"{src}.attention.self.key", f"{dst}.attn.key")
        linear(f"{src}.attention.self.value", f"{dst}.attn.value")
        linear(f"{src}.attention.output.dense", f"{dst}.attn.output")
        norm(f"{src}.attention.output.LayerNorm", f"{dst}.attn.norm")
        linear(f"{src}.intermediate.dense", f"{dst}.ffn.intermediate")
        linear(f"{src}.output.dense", f"{dst}.ffn.output")
        norm(f"{src}.output.LayerNorm", f"{dst}.ffn.norm")
    linear("cls.predictions.transform.dense", "mlm.transform")
    norm("cls.predictions.transform.LayerNorm", "mlm.norm")
    table.append(("cls.predictions.bias", "mlm.output_bias", False))
    return table
