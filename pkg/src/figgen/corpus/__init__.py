"""Figure-caption corpus handling: records, filtering, padding, tokenization,
synthetic corpora, and manifest I/O."""

from figgen.corpus.manifest import ManifestError, load_manifest, write_corpus
from figgen.corpus.prepare import PreparedDataset, prepare_dataset
from figgen.corpus.records import (
    FigureRecord,
    PreparedSample,
    aspect_ratio_filter,
    pad_and_resize,
    pad_to_square,
)
from figgen.corpus.synthetic import CAPTION_TEMPLATES, synthesize_corpus
from figgen.corpus.tokenizer import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    SubwordTokenizer,
    train_tokenizer,
)

__all__ = [
    "FigureRecord",
    "PreparedSample",
    "aspect_ratio_filter",
    "pad_to_square",
    "pad_and_resize",
    "SubwordTokenizer",
    "train_tokenizer",
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "UNK_ID",
    "synthesize_corpus",
    "CAPTION_TEMPLATES",
    "load_manifest",
    "write_corpus",
    "ManifestError",
    "prepare_dataset",
    "PreparedDataset",
]
