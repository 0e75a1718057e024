"""Device placement and slot-valued travel times.

Index 0 is always the server; clients follow in input order as 1..N.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Point = tuple[float, float]


@dataclass(frozen=True)
class Topology:
    server_pos: Point
    client_pos: tuple[Point, ...]
    speed: float
    travel_slots: np.ndarray = field(repr=False, compare=False)

    @property
    def num_clients(self) -> int:
        return len(self.client_pos)

    def positions(self) -> np.ndarray:
        """All device coordinates as an (N+1, 2) array, server first."""
        return np.array([self.server_pos, *self.client_pos], dtype=float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            self.server_pos == other.server_pos
            and self.client_pos == other.client_pos
            and self.speed == other.speed
        )

    def __hash__(self) -> int:
        return hash((self.server_pos, self.client_pos, self.speed))

    def to_dict(self) -> dict:
        return {
            "server": list(self.server_pos),
            "clients": [list(p) for p in self.client_pos],
            "speed": self.speed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Topology:
        # The matrix is never read from the document.
        try:
            return build_topology(doc["server"], doc["clients"], doc["speed"])
        except KeyError as exc:
            raise ValueError(f"topology document missing key {exc.args[0]!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_point(p, what: str) -> Point:
    try:
        x, y = (float(v) for v in p)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be a pair of numbers, got {p!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"{what} has a non-finite coordinate: {p!r}")
    return (x, y)


def build_topology(server_pos, client_pos, speed: float) -> Topology:
    """Build a topology; travel_slots[i][j] = ceil(dist(i, j) / speed)."""
    speed = float(speed)
    if not math.isfinite(speed) or speed <= 0:
        raise ValueError(f"speed must be a positive finite number, got {speed!r}")
    server = _as_point(server_pos, "server position")
    clients = tuple(_as_point(p, f"client {i + 1} position") for i, p in enumerate(client_pos))
    if not clients:
        raise ValueError("at least one client is required")

    pts = np.array([server, *clients], dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    slots = np.ceil(dist / speed).astype(np.int64)
    # Guard against asymmetric rounding of the float distances.
    slots = np.maximum(slots, slots.T)
    np.fill_diagonal(slots, 0)
    slots.setflags(write=False)
    return Topology(server, clients, speed, slots)


def _grid_shape(num_blocks: int, block_w: float, block_h: float) -> tuple[int, int]:
    # Pick the column count whose tiling is closest to square.
    best = None
    for cols in range(1, num_blocks + 1):
        if num_blocks % cols:
            continue
        rows = num_blocks // cols
        score = abs(cols * block_w - rows * block_h)
        if best is None or score < best[0]:
            best = (score, cols, rows)
    return best[1], best[2]


def generate_grid_network(
    num_blocks: int,
    clients_per_block: int,
    block_w: float,
    block_h: float,
    seed: int,
) -> tuple[Point, list[Point]]:
    """Scatter clients uniformly inside equally sized blocks tiling a rectangle.

    Blocks are laid out row-major starting at the origin, which is also
    where the server sits. Returns ``(server_pos, client_pos)``.
    """
    if num_blocks <= 0 or clients_per_block <= 0:
        raise ValueError("num_blocks and clients_per_block must be positive")
    if block_w <= 0 or block_h <= 0:
        raise ValueError("block dimensions must be positive")
    cols, _ = _grid_shape(num_blocks, block_w, block_h)
    rng = np.random.default_rng(seed)
    clients: list[Point] = []
    for b in range(num_blocks):
        x0 = (b % cols) * block_w
        y0 = (b // cols) * block_h
        u = rng.random((clients_per_block, 2))
        for ux, uy in u:
            clients.append((x0 + float(ux) * block_w, y0 + float(uy) * block_h))
    return (0.0, 0.0), clients


def block_of(pos: Point, num_blocks: int, block_w: float, block_h: float) -> int:
    """Block index containing ``pos`` under the same layout as the generator."""
    cols, _ = _grid_shape(num_blocks, block_w, block_h)
    col = min(int(pos[0] // block_w), cols - 1)
    row = int(pos[1] // block_h)
    return row * cols + col


def grid_preset(seed: int, speed: float = 4.0) -> Topology:
    """40 clients in ten 4x10 blocks, transporters moving 4 units per slot."""
    server, clients = generate_grid_network(10, 4, 4.0, 10.0, seed)
    return build_topology(server, clients, speed)
