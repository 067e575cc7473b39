"""Tests for seeding, innovation markings and S-box helpers."""

from __future__ import annotations

import numpy as np
import pytest

from infoneat import InputError
from infoneat.innovation import InnovationRegistry
from infoneat.sbox import (
    AES_SBOX,
    PRESENT_SBOX,
    bit_width,
    check_sbox,
    default_sbox,
    hamming_weight,
    inverse_sbox,
)
from infoneat.seeding import child_seed, derive_rng


class TestSeeding:
    """Generators derived from one master seed."""

    def test_same_inputs_same_stream(self) -> None:
        a = derive_rng(7, "submodel", 3).random(5)
        b = derive_rng(7, "submodel", 3).random(5)

        assert a.tolist() == b.tolist()

    def test_purpose_and_index_separate_streams(self) -> None:
        base = derive_rng(7, "submodel", 3).random(5).tolist()

        assert derive_rng(7, "submodel", 4).random(5).tolist() != base
        assert derive_rng(7, "attack", 3).random(5).tolist() != base
        assert derive_rng(8, "submodel", 3).random(5).tolist() != base

    def test_child_seed_fits_in_31_bits(self) -> None:
        seed = child_seed(np.random.default_rng(0))

        assert 0 <= seed < 2**31


class TestInnovationRegistry:
    """Historical markings."""

    def test_pairs_keep_their_number(self) -> None:
        registry = InnovationRegistry()

        first = registry.connection(0, 3)
        second = registry.connection(1, 3)

        assert registry.connection(0, 3) == first
        assert second == first + 1

    def test_same_split_same_node_within_a_generation(self) -> None:
        registry = InnovationRegistry(next_node_id=5)

        a = registry.split_node(0, existing={0, 1})
        b = registry.split_node(0, existing={0, 1})
        registry.new_generation()
        c = registry.split_node(0, existing={0, 1})

        assert a == b == 5
        assert c == 6

    def test_split_already_in_genome_gets_a_fresh_id(self) -> None:
        registry = InnovationRegistry(next_node_id=5)
        registry.split_node(0, existing=set())

        assert registry.split_node(0, existing={5}) == 6

    def test_connections_view_is_read_only(self) -> None:
        registry = InnovationRegistry()
        registry.connection(0, 1)

        with pytest.raises(TypeError):
            registry.connections[(2, 3)] = 9  # type: ignore[index]


class TestSbox:
    """Substitution tables."""

    def test_aes_known_values(self) -> None:
        assert AES_SBOX[0x00] == 0x63
        assert AES_SBOX[0x53] == 0xED

    def test_inverse(self) -> None:
        inverse = inverse_sbox(AES_SBOX)

        assert np.array_equal(inverse[AES_SBOX], np.arange(256))

    def test_defaults(self) -> None:
        assert default_sbox(256) is AES_SBOX
        assert default_sbox(16) is PRESENT_SBOX
        with pytest.raises(InputError):
            default_sbox(8)

    def test_non_permutation_is_rejected(self) -> None:
        with pytest.raises(InputError, match="permutation"):
            check_sbox([0, 0, 1, 2])

    def test_odd_size_is_rejected(self) -> None:
        with pytest.raises(InputError, match="power of two"):
            check_sbox([0, 1, 2])

    def test_hamming_weight(self) -> None:
        assert hamming_weight([0, 1, 3, 255]).tolist() == [0, 1, 2, 8]

    def test_bit_width(self) -> None:
        assert [bit_width(n) for n in (2, 4, 16, 256)] == [1, 2, 4, 8]
