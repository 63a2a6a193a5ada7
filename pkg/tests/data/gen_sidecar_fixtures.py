"""Regenerate the contextual-embedding fixtures under tests/data/sidecars/.

Deterministic: token vectors are hashes of the token string, so identical
tokens get identical vectors and the planted clause is retrievable by mean
cosine. Run from the repository root:

    python tests/data/gen_sidecar_fixtures.py
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from clauseseek.corpus import Document, write_reference_tsv
from clauseseek.vectorize import tokenize, write_sidecar_doc

DIM = 8
CLAUSE = "this agreement shall be governed by the laws of the state of delaware."
DOCS = {
    "fx1": ["payment terms accrue interest monthly at the stated rate.",
            CLAUSE,
            "notices are delivered to the registered office in writing."],
    "fx2": ["confidential information excludes material already public.",
            "the parties waive trial by jury for any covered dispute.",
            CLAUSE],
    "fx3": [CLAUSE,
            "either party may terminate upon sixty days written notice.",
            "severability of any clause preserves the remaining terms.",
            "headings are for convenience and carry no legal weight."],
}


def token_vector(token: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode()).digest()[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(DIM).astype(np.float32)


def main() -> None:
    out_dir = Path(__file__).parent / "sidecars"
    out_dir.mkdir(exist_ok=True)
    docs = []
    manifest_rows = []
    for doc_id, sentences in DOCS.items():
        text = " ".join(sentences)
        docs.append(Document(doc_id, text))
        tokens = tokenize(text)
        offsets = [iv for _, iv in tokens]
        matrix = np.vstack([token_vector(t) for t, _ in tokens])
        file_name = f"{doc_id}.cdsc"
        write_sidecar_doc(out_dir / file_name, offsets, matrix)
        manifest_rows.append(
            f"{doc_id}\t{file_name}\t{len(offsets)}\t{DIM}\tfixture-hash-model\tlast")
    with open(out_dir / "manifest.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for row in manifest_rows:
            fh.write(row + "\n")
    write_reference_tsv(out_dir / "reference.tsv", docs)
    print(f"wrote {len(docs)} fixture documents to {out_dir}")


if __name__ == "__main__":
    main()
