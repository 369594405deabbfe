"""Synthetic feature sequences with a planted, gradable segment.

Each video is a (T, D) float matrix of background noise plus a per-video
appearance offset. One informative segment adds a class prototype vector;
the annotated timestamp falls inside it, and the segment bounds are kept as
a hidden oracle for evaluation. Distractor segments add activity vectors
that are orthogonal to every class prototype: they look like "something
happening" without carrying class evidence, so localization has decoys to
reject.

Segments are half-open frame intervals [start, end). Features are rounded
to float32 precision at generation time, which makes the float32 file
format lossless on round trip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from tsgrade.binio import FormatError, Reader, atomic_write

MAGIC = b"TGDS"
VERSION = 1


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 200
    t_range: tuple[int, int] = (300, 900)
    feature_dim: int = 16
    n_grades: int = 5
    segment_len_range: tuple[int, int] = (40, 120)
    prototype_scale: float = 1.0
    noise_level: float = 0.25
    offset_ratio: float = 1.2
    distractor_range: tuple[int, int] = (1, 3)
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_videos < 1:
            raise ValueError("SynthConfig: n_videos must be positive")
        if self.n_grades < 2:
            raise ValueError("SynthConfig: need at least 2 grades")
        if self.prototype_scale <= 0 or self.noise_level < 0 or self.offset_ratio < 0:
            raise ValueError("SynthConfig: scales must be non-negative (prototype scale positive)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("SynthConfig: train_fraction must be in (0, 1)")
        lo, hi = self.t_range
        slo, shi = self.segment_len_range
        if lo > hi or slo > shi or lo < 1 or slo < 1:
            raise ValueError("SynthConfig: invalid t_range or segment_len_range")
        if shi > lo:
            raise ValueError(
                f"SynthConfig: longest segment ({shi}) does not fit the shortest video ({lo})"
            )


@dataclass
class SynthVideo:
    features: np.ndarray
    grade: int
    timestamp: int
    segment: tuple[int, int]
    distractors: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class SynthDataset:
    config: SynthConfig
    prototypes: np.ndarray
    train: list[SynthVideo]
    test: list[SynthVideo]

    @property
    def videos(self) -> list[SynthVideo]:
        return self.train + self.test


def _draw_prototypes(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Unit vectors scaled by prototype_scale, pairwise distance >= scale."""
    for _ in range(1000):
        raw = rng.normal(size=(cfg.n_grades, cfg.feature_dim))
        unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        protos = cfg.prototype_scale * unit
        dists = np.linalg.norm(protos[:, None] - protos[None, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= cfg.prototype_scale:
            return protos
    raise RuntimeError("could not place separated prototypes; feature_dim too small?")


def _orthogonal_activity(rng: np.random.Generator, prototypes: np.ndarray,
                         scale: float) -> np.ndarray:
    for _ in range(100):
        a = rng.normal(size=prototypes.shape[1])
        basis, _ = np.linalg.qr(prototypes.T)
        a = a - basis @ (basis.T @ a)
        norm = np.linalg.norm(a)
        if norm > 1e-9:
            return scale * a / norm
    raise RuntimeError("could not draw an activity vector orthogonal to the prototypes")


def _balanced_grades(rng: np.random.Generator, cfg: SynthConfig) -> list[int]:
    base, extra = divmod(cfg.n_videos, cfg.n_grades)
    order = list(rng.permutation(cfg.n_grades) + 1)
    grades: list[int] = []
    for pos, g in enumerate(order):
        grades.extend([int(g)] * (base + (1 if pos < extra else 0)))
    rng.shuffle(grades)
    return grades


def _place_distractor(rng: np.random.Generator, t: int, length: int,
                      segment: tuple[int, int]) -> tuple[int, int] | None:
    for _ in range(50):
        start = int(rng.integers(0, t - length + 1))
        if start + length <= segment[0] or start >= segment[1]:
            return (start, start + length)
    return None


def generate(cfg: SynthConfig) -> SynthDataset:
    """Build a deterministic train/test dataset from the config seed."""
    root = np.random.SeedSequence(cfg.seed)
    global_seq, *video_seqs = root.spawn(cfg.n_videos + 1)
    g_rng = np.random.default_rng(global_seq)

    prototypes = _draw_prototypes(g_rng, cfg)
    grades = _balanced_grades(g_rng, cfg)

    videos: list[SynthVideo] = []
    for i, seq in enumerate(video_seqs):
        rng = np.random.default_rng(seq)
        t = int(rng.integers(cfg.t_range[0], cfg.t_range[1] + 1))
        length = int(rng.integers(cfg.segment_len_range[0], cfg.segment_len_range[1] + 1))
        start = int(rng.integers(0, t - length + 1))
        segment = (start, start + length)
        timestamp = int(rng.integers(start, start + length))
        grade = grades[i]

        x = rng.normal(0.0, cfg.noise_level, size=(t, cfg.feature_dim))
        x += rng.normal(0.0, cfg.offset_ratio * cfg.noise_level, size=cfg.feature_dim)
        x[start:start + length] += prototypes[grade - 1]

        distractors: list[tuple[int, int]] = []
        n_distract = int(rng.integers(cfg.distractor_range[0], cfg.distractor_range[1] + 1))
        for _ in range(n_distract):
            dlen = int(rng.integers(cfg.segment_len_range[0], cfg.segment_len_range[1] + 1))
            dlen = min(dlen, t)
            placed = _place_distractor(rng, t, dlen, segment)
            if placed is None:
                continue
            x[placed[0]:placed[1]] += _orthogonal_activity(rng, prototypes, cfg.prototype_scale)
            distractors.append(placed)

        x = x.astype(np.float32).astype(np.float64)
        videos.append(SynthVideo(x, grade, timestamp, segment, distractors))

    # stratified split keeps both halves balanced
    train_idx: list[int] = []
    test_idx: list[int] = []
    for g in range(1, cfg.n_grades + 1):
        members = [i for i, v in enumerate(videos) if v.grade == g]
        members = list(g_rng.permutation(members))
        cut = int(round(cfg.train_fraction * len(members)))
        train_idx.extend(members[:cut])
        test_idx.extend(members[cut:])
    train_idx.sort()
    test_idx.sort()
    return SynthDataset(
        cfg,
        prototypes,
        [videos[i] for i in train_idx],
        [videos[i] for i in test_idx],
    )


def nearest_prototype_grade(vec: np.ndarray, prototypes: np.ndarray) -> int:
    """1-based grade of the prototype closest to ``vec`` in euclidean distance."""
    return int(np.argmin(np.linalg.norm(prototypes - vec[None, :], axis=1))) + 1


# -- file format -----------------------------------------------------------
#
#   offset 0   magic       4 bytes  b"TGDS"
#   offset 4   version     u32      currently 1
#   offset 8   header_len  u32
#   offset 12  header      UTF-8 JSON: config echo, prototypes, split sizes
#   per video (train videos first, then test):
#       t u32, d u32, grade u16, timestamp u32, seg_start u32, seg_end u32,
#       n_distractors u16, (start u32, end u32) per distractor,
#       features f32 little-endian, row-major, t*d values


def save_dataset(path, ds: SynthDataset) -> None:
    header = {
        "config": asdict(ds.config),
        "prototypes": ds.prototypes.tolist(),
        "n_train": len(ds.train),
        "n_test": len(ds.test),
    }
    hblob = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(hblob)), hblob]
    for v in ds.videos:
        t, d = v.features.shape
        chunks.append(struct.pack("<IIHIII", t, d, v.grade, v.timestamp,
                                  v.segment[0], v.segment[1]))
        chunks.append(struct.pack("<H", len(v.distractors)))
        for a, b in v.distractors:
            chunks.append(struct.pack("<II", a, b))
        chunks.append(np.ascontiguousarray(v.features, dtype="<f4").tobytes())
    atomic_write(path, b"".join(chunks))


def load_dataset(path) -> SynthDataset:
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), str(path))
    if rd.take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic)")
    version, hlen = rd.unpack("<II", "version and header length")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version} (expected {VERSION})")
    try:
        header = json.loads(rd.take(hlen, "header"))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: corrupt header JSON: {err}") from None
    raw = dict(header["config"])
    for key in ("t_range", "segment_len_range", "distractor_range"):
        raw[key] = tuple(raw[key])
    cfg = SynthConfig(**raw)
    prototypes = np.asarray(header["prototypes"], dtype=np.float64)
    n_train, n_test = int(header["n_train"]), int(header["n_test"])

    videos: list[SynthVideo] = []
    for k in range(n_train + n_test):
        t, d, grade, timestamp, s0, s1 = rd.unpack("<IIHIII", f"record head of video {k}")
        (nd,) = rd.unpack("<H", f"distractor count of video {k}")
        distractors = [tuple(rd.unpack("<II", "distractor bounds")) for _ in range(nd)]
        data = np.frombuffer(rd.take(4 * t * d, f"features of video {k}"), dtype="<f4")
        feats = data.reshape(t, d).astype(np.float64)
        videos.append(SynthVideo(feats, int(grade), int(timestamp), (int(s0), int(s1)),
                                 [(int(a), int(b)) for a, b in distractors]))
    rd.expect_end()
    return SynthDataset(cfg, prototypes, videos[:n_train], videos[n_train:])
