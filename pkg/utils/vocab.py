"""
Closed word-level vocabulary for the synthetic answer texts.
"""
from pathlib import Path
from typing import Iterable, List, Union

from core.errors import VocabError
from core.message import TokenSequence

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)
TASK_WORDS = ("chunk", "first", "a", "b", "tone", "yes", "no")


class Vocab:
    """Token list where the position of a token is its id."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: List[str] = list(tokens)
        if tuple(self.tokens[:3]) != SPECIALS:
            raise VocabError(f"vocabulary must start with {SPECIALS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabError("vocabulary contains duplicate tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def default(cls, size: int = 64) -> "Vocab":
        """Specials, task words, then chunk numbers 1, 2, ... up to `size` tokens."""
        fixed = len(SPECIALS) + len(TASK_WORDS)
        if size <= fixed:
            raise VocabError(f"vocabulary size {size} leaves no room for chunk numbers")
        numbers = [str(i) for i in range(1, size - fixed + 1)]
        return cls([*SPECIALS, *TASK_WORDS, *numbers])

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def encode(self, text: str) -> TokenSequence:
        ids = [self.bos_id]
        for word in text.split():
            if word not in self.index or word in SPECIALS:
                raise VocabError(f"out-of-vocabulary word '{word}'")
            ids.append(self.index[word])
        ids.append(self.eos_id)
        return TokenSequence(ids=ids, vocab_size=len(self))

    def decode(self, ids: Union[TokenSequence, Iterable[int]]) -> str:
        """Words up to the first EOS, specials dropped."""
        if isinstance(ids, TokenSequence):
            ids = ids.ids
        words = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self):
                raise VocabError(f"token id {i} outside vocabulary of size {len(self)}")
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def save(self, path: Union[str, Path]) -> None:
        """One token per line; line number is the id."""
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    return vocab.encode(text)


def detokenize(seq: Union[TokenSequence, Iterable[int]], vocab: Vocab) -> str:
    return vocab.decode(seq)
