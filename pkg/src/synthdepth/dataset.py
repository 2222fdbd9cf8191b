"""Reproducible RGB/depth dataset manifests.

Sampling uses a splitmix64 stream driving a partial Fisher-Yates shuffle, so
a (sources, counts, seed) triple yields the same manifest on every platform.
Manifests serialize as JSON with sorted keys and a single trailing newline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .depthio import png_size, read_pfm, read_png8
from .errors import CapacityError, ConflictError, FormatError, ValidationError

TAGS = ("nyu", "ue", "gan", "other")
MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64 generator (Steele, Lea & Flood), 64-bit state."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection; no modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def sample_indices(n: int, k: int, rng: SplitMix64) -> list[int]:
    """First ``k`` positions of a Fisher-Yates shuffle of ``range(n)``."""
    idx = list(range(n))
    for i in range(k):
        j = i + rng.below(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


@dataclass(frozen=True)
class Entry:
    id: str
    rgb: str
    depth: str
    tag: str

    def __post_init__(self):
        if not self.id:
            raise ValidationError("entry id must be nonempty")
        if not self.rgb or not self.depth:
            raise ValidationError(f"entry {self.id!r} needs both rgb and depth paths")
        if self.tag not in TAGS:
            raise ValidationError(f"entry {self.id!r}: unknown tag {self.tag!r}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple = ()
    seed: int = 0
    created_from: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ConflictError(f"duplicate id {e.id!r}")
            seen.add(e.id)

    def __len__(self):
        return len(self.entries)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "created_from": self.created_from,
                "entries": [{"id": e.id, "rgb": e.rgb, "depth": e.depth, "tag": e.tag}
                            for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            entries = [Entry(e["id"], e["rgb"], e["depth"], e["tag"]) for e in d["entries"]]
            return cls(entries, int(d["seed"]), str(d.get("created_from", "")))
        except (KeyError, TypeError) as e:
            raise FormatError(f"malformed manifest: {e!r}") from e

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest is not valid JSON: {e}") from e


def compose_manifest(sources: Sequence[tuple[str, Sequence[Entry]]], counts: Mapping[str, int],
                     seed: int, created_from: str = "") -> DatasetManifest:
    """Sample ``counts[tag]`` entries without replacement from each tagged source.

    Tags are visited in the order of ``sources``; one generator stream is
    shared across them. Tags absent from ``counts`` contribute nothing.
    """
    seen: dict[str, str] = {}
    for tag, entries in sources:
        for e in entries:
            if e.id in seen:
                raise ConflictError(f"duplicate id {e.id!r} in sources {seen[e.id]!r} and {tag!r}")
            seen[e.id] = tag
    known = {tag for tag, _ in sources}
    for tag, k in counts.items():
        if tag not in known and k:
            raise CapacityError(f"no source for tag {tag!r}")
        if k < 0:
            raise ValidationError(f"count for {tag!r} must be >= 0")

    rng = SplitMix64(seed)
    out: list[Entry] = []
    for tag, entries in sources:
        k = counts.get(tag, 0)
        if k > len(entries):
            raise CapacityError(f"requested {k} {tag!r} entries but only {len(entries)} exist")
        out.extend(entries[i] for i in sample_indices(len(entries), k, rng))
    if not created_from:
        created_from = ", ".join(f"{tag}:{counts.get(tag, 0)}/{len(e)}" for tag, e in sources)
    return DatasetManifest(out, seed, created_from)


def split_manifest(m: DatasetManifest, val_fraction: float, seed: int
                   ) -> tuple[DatasetManifest, DatasetManifest]:
    """Disjoint (train, validation) split; both keep the input's entry order."""
    if not (0 <= val_fraction < 1):
        raise ValidationError("val_fraction must lie in [0, 1)")
    n = len(m)
    k = int(val_fraction * n + 0.5)
    val_idx = set(sample_indices(n, k, SplitMix64(seed)))
    train = [e for i, e in enumerate(m.entries) if i not in val_idx]
    val = [e for i, e in enumerate(m.entries) if i in val_idx]
    note = f"split of [{m.created_from}] val_fraction={val_fraction} seed={seed}"
    return (DatasetManifest(train, m.seed, note + " (train)"),
            DatasetManifest(val, m.seed, note + " (validation)"))


def scan_source(tag: str, directory, rgb_dir: str = "rgb", depth_dir: str = "depth") -> list[Entry]:
    """Pair ``<dir>/rgb/<stem>.png`` with ``<dir>/depth/<stem>.{png,pfm}``.

    Stems present on only one side are skipped. Entries are sorted by stem;
    ids are ``<tag>/<stem>``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"source directory {root} does not exist")
    rgbs = {p.stem: p for p in sorted((root / rgb_dir).glob("*.png"))}
    depths: dict[str, Path] = {}
    for p in sorted((root / depth_dir).glob("*")):
        if p.suffix.lower() in (".png", ".pfm") and p.stem not in depths:
            depths[p.stem] = p
    return [Entry(f"{tag}/{stem}", rgbs[stem].as_posix(), depths[stem].as_posix(), tag)
            for stem in sorted(rgbs.keys() & depths.keys())]


@dataclass
class ValidationReport:
    checked: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def ids(self) -> list[str]:
        return [f["id"] for f in self.failures]

    def to_dict(self) -> dict:
        return {"status": "ok" if self.ok else "failed", "checked": self.checked,
                "failures": self.failures}


def _depth_size(path: Path) -> tuple[int, int]:
    data = path.read_bytes()
    if path.suffix.lower() == ".pfm":
        m = read_pfm(data)
        return m.width, m.height
    q = read_png8(data)
    return q.width, q.height


def validate_manifest(m: DatasetManifest, expectations: Optional[dict] = None,
                      base_dir=None) -> ValidationReport:
    """Check each entry's files; collect every problem instead of stopping.

    ``expectations`` may hold ``width`` and ``height``; relative paths are
    resolved against ``base_dir``.
    """
    base = Path(base_dir) if base_dir is not None else None
    report = ValidationReport()

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if base is None or q.is_absolute() else base / q

    def fail(entry, kind, message):
        report.failures.append({"id": entry.id, "kind": kind, "message": message})

    for e in m.entries:
        report.checked += 1
        sizes = {}
        for role, path, reader in (("rgb", resolve(e.rgb), lambda p: png_size(p.read_bytes())),
                                   ("depth", resolve(e.depth), _depth_size)):
            if not path.exists():
                fail(e, "missing", f"{role} file {path} not found")
                continue
            try:
                sizes[role] = reader(path)
            except (OSError, FormatError, ValidationError) as exc:
                fail(e, "unreadable", f"{role} file {path}: {exc}")
        if expectations:
            want = (expectations.get("width"), expectations.get("height"))
            for role, (w, h) in sizes.items():
                if (want[0] is not None and w != want[0]) or (want[1] is not None and h != want[1]):
                    fail(e, "dimension", f"{role} is {w}x{h}, expected {want[0]}x{want[1]}")
    return report


def load_sources(specs: Iterable[str]) -> list[tuple[str, list[Entry]]]:
    """Parse ``tag=dir`` strings and scan each directory."""
    out = []
    for s in specs:
        tag, sep, d = s.partition("=")
        if not sep or not d:
            raise ValidationError(f"--source expects tag=dir, got {s!r}")
        if tag not in TAGS:
            raise ValidationError(f"unknown tag {tag!r}; expected one of {', '.join(TAGS)}")
        out.append((tag, scan_source(tag, d)))
    return out
