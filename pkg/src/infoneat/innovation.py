from __future__ import annotations

from collections.abc import Collection, Mapping
from types import MappingProxyType


class InnovationRegistry:
    """Historical markings shared by every genome of one evolution run.

    A (from_node, to_node) pair keeps the same innovation number for the whole
    run, so two genomes that grew the same connection line up in crossover.
    Node splits are keyed by the split connection's innovation and reset each
    generation: the same split within a generation yields the same node id.

    Only the reproduction phase may call the mutating methods.
    """

    def __init__(self, next_node_id: int = 0) -> None:
        self._connections: dict[tuple[int, int], int] = {}
        self._splits: dict[int, int] = {}
        self._next_innovation = 0
        self._next_node_id = next_node_id

    @property
    def connections(self) -> Mapping[tuple[int, int], int]:
        """Read-only view of every connection innovation issued so far."""
        return MappingProxyType(self._connections)

    @property
    def next_node_id(self) -> int:
        return self._next_node_id

    def reserve_nodes(self, up_to: int) -> None:
        """Make sure ids below ``up_to`` are never handed out as new nodes."""
        self._next_node_id = max(self._next_node_id, up_to)

    def connection(self, from_node: int, to_node: int) -> int:
        """Innovation number for the connection ``from_node -> to_node``."""
        pair = (from_node, to_node)
        if pair not in self._connections:
            self._connections[pair] = self._next_innovation
            self._next_innovation += 1
        return self._connections[pair]

    def fresh_node_id(self) -> int:
        node_id = self._next_node_id
        self._next_node_id += 1
        return node_id

    def split_node(self, innovation: int, existing: Collection[int]) -> int:
        """Node id for splitting connection ``innovation``.

        Falls back to a fresh id when the keyed id is already present in the
        genome being mutated (a re-split after crossover).
        """
        node_id = self._splits.get(innovation)
        if node_id is None:
            node_id = self.fresh_node_id()
            self._splits[innovation] = node_id
        if node_id in existing:
            node_id = self.fresh_node_id()
        return node_id

    def new_generation(self) -> None:
        """Forget this generation's node splits."""
        self._splits.clear()
