"""Shared fixtures: a small trained vocabulary reused across test modules."""

from __future__ import annotations

import pytest

from codelm.tokenizer import train_vocab

SMALL_CORPUS = [
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "int add ( int a , int b ) OBRACE return a + b ; CBRACE",
    "int max ( int a , int b ) OBRACE if ( a RANGLETOK b ) OBRACE return a ; CBRACE return b ; CBRACE",
    "sums two integers and returns the total",
    "returns the larger of two values",
    "while ( n RANGLETOK 0 ) OBRACE n = n - 1 ; CBRACE",
]


@pytest.fixture(scope="session")
def small_vocab():
    return train_vocab(SMALL_CORPUS * 2, 420)
