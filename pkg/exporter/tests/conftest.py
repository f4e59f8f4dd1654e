import json

import pytest
import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers
from tokenizers.processors import BertProcessing
from transformers import BertConfig, BertModel, BertTokenizerFast

PIECES = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "was", "is", "we", "had", "there", ".", ";", "(", ")",
    "what", "which", "tokens", "indicate", "sentiments", "relating",
    "pairs", "of", "aspect", "opinion", "spans", "span", "for",
    "sentiment", "indicated", "at", "?", "positive", "negative", "neutral",
    "soup", "tasty", "lovely", "but", "rather",
    "over", "##priced", "din", "##ner", "bread", "sta", "##le",
    "great", "staff", "friendly", "salad", "fresh", "music", "loud",
    "menu", "plain", "wine", "crisp", "service", "slow", "nothing", "here",
]


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """A tiny randomly initialized BERT-style checkpoint saved locally."""
    path = tmp_path_factory.mktemp("tiny-bert")
    vocab = {piece: i for i, piece in enumerate(PIECES)}
    wordpiece = Tokenizer(models.WordPiece(vocab=vocab, unk_token="[UNK]"))
    wordpiece.normalizer = normalizers.BertNormalizer(lowercase=True)
    wordpiece.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    wordpiece.post_processor = BertProcessing(
        sep=("[SEP]", vocab["[SEP]"]), cls=("[CLS]", vocab["[CLS]"])
    )
    tokenizer = BertTokenizerFast(
        tokenizer_object=wordpiece, unk_token="[UNK]", cls_token="[CLS]",
        sep_token="[SEP]", pad_token="[PAD]", mask_token="[MASK]",
    )
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(PIECES),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    model = BertModel(config)
    model.eval()
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return str(path)


FIXTURE_SENTENCES = [
    # 3 triplets, shared aspect, multi-subword opinion word -> 7 records
    {
        "id": "s0",
        "tokens": "the soup was tasty ; we had a lovely ( but rather overpriced ) dinner there .".split(),
        "triplets": [
            {"aspect": [1, 1], "opinion": [3, 3], "sentiment": "positive"},
            {"aspect": [14, 14], "opinion": [8, 8], "sentiment": "positive"},
            {"aspect": [14, 14], "opinion": [11, 12], "sentiment": "negative"},
        ],
    },
    {"id": "s1", "tokens": "nothing here .".split(), "triplets": []},
    {
        "id": "s2",
        "tokens": "the bread was stale .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "negative"}],
    },
    {
        "id": "s3",
        "tokens": "the staff was friendly .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "positive"}],
    },
    {
        "id": "s4",
        "tokens": "the salad was fresh but the music was loud .".split(),
        "triplets": [
            {"aspect": [1, 1], "opinion": [3, 3], "sentiment": "positive"},
            {"aspect": [6, 6], "opinion": [8, 8], "sentiment": "negative"},
        ],
    },
    {
        "id": "s5",
        "tokens": "the menu was plain .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "neutral"}],
    },
    {
        "id": "s6",
        "tokens": "the wine was crisp .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "positive"}],
    },
    {
        "id": "s7",
        "tokens": "the service was slow .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "negative"}],
    },
    {"id": "s8", "tokens": "we had wine there .".split(), "triplets": []},
    {
        "id": "s9",
        "tokens": "the dinner was overpriced .".split(),
        "triplets": [{"aspect": [1, 1], "opinion": [3, 3], "sentiment": "negative"}],
    },
]


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "fixture.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for record in FIXTURE_SENTENCES:
            fh.write(json.dumps(record) + "\n")
    return str(path)


def expected_record_count():
    return sum(1 + 2 * len(s["triplets"]) for s in FIXTURE_SENTENCES)
