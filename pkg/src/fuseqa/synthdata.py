"""Synthetic audio+text four-choice task with known per-modality ceilings.

Two instance kinds. TEXT: the passage hides one of four key tokens and
that token alone fixes the label; the audio tone bit is drawn but
irrelevant. TONE: the passage hides one of two pair tokens which narrows
the answer to two slots, and the audio tone bit (one of two fixed
orthogonal patterns added to every frame) picks between them:
label = 2 * pair + tone. Questions and choices are fixed templates; the
choice sequences carry the four choice-identity tokens.

Ideal accuracies follow directly: text-only (1-rho) + rho/2, audio-only
(1-rho)/4 + rho/2, both modalities 1.0.
"""

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

KEY_TOKENS = (0, 1, 2, 3)      # TEXT-kind answer keys
PAIR_TOKENS = (4, 5)           # TONE-kind pair selectors
CHOICE_TOKENS = (6, 7, 8, 9)   # choice-identity tokens
QUESTION_TOKENS = (10, 11)     # fixed question template
FILLER_START = 12
MIN_FILLERS = 8
AUDIO_WIDTH = 128

MANIFEST_NAME = "manifest.json"
SPLIT_NAMES = ("train", "dev", "test")


class DatasetParseError(ValueError):
    def __init__(self, path, line_no, why):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {why}")


@dataclass
class GenConfig:
    seed: int = 0
    n_train: int = 2000
    n_dev: int = 400
    n_test: int = 400
    rho: float = 0.5
    vocab_size: int = 64
    passage_len_min: int = 8
    passage_len_max: int = 16
    frames_min: int = 6
    frames_max: int = 12
    noise_std: float = 0.5
    tone_magnitude: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1]")
        if self.vocab_size < FILLER_START + MIN_FILLERS:
            raise ValueError(f"vocab_size must be >= {FILLER_START + MIN_FILLERS}")
        if not 1 <= self.passage_len_min <= self.passage_len_max <= 384:
            raise ValueError("passage length range must fit 1..384")
        if not 1 <= self.frames_min <= self.frames_max <= 384:
            raise ValueError("frame count range must fit 1..384")
        if self.noise_std < 0 or self.tone_magnitude <= 0:
            raise ValueError("noise_std must be >= 0 and tone_magnitude > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Instance:
    id: str
    kind: str            # "TEXT" | "TONE"
    label: int           # 0..3
    passage: list        # token ids, exactly one key/pair token
    question: list       # token ids
    choices: list        # 4 token-id lists
    frames: np.ndarray   # (M, 128) float64

    def __eq__(self, other):
        return (self.id == other.id and self.kind == other.kind
                and self.label == other.label and self.passage == other.passage
                and self.question == other.question and self.choices == other.choices
                and np.array_equal(self.frames, other.frames))


def tone_patterns(magnitude: float):
    """Two fixed orthogonal 128-wide patterns, each with norm `magnitude`."""
    base = magnitude / np.sqrt(AUDIO_WIDTH)
    u0 = np.full(AUDIO_WIDTH, base)
    u1 = base * np.where(np.arange(AUDIO_WIDTH) % 2 == 0, 1.0, -1.0)
    return u0, u1


def _gen_instance(rng, config: GenConfig, inst_id: str) -> Instance:
    u = tone_patterns(config.tone_magnitude)
    is_tone = rng.random() < config.rho
    length = int(rng.integers(config.passage_len_min, config.passage_len_max + 1))
    passage = rng.integers(FILLER_START, config.vocab_size, size=length)
    pos = int(rng.integers(0, length))
    tone = int(rng.integers(0, 2))
    if is_tone:
        pair = int(rng.integers(0, 2))
        passage[pos] = PAIR_TOKENS[pair]
        kind, label = "TONE", 2 * pair + tone
    else:
        key = int(rng.integers(0, 4))
        passage[pos] = KEY_TOKENS[key]
        kind, label = "TEXT", key
    m = int(rng.integers(config.frames_min, config.frames_max + 1))
    frames = rng.normal(0.0, config.noise_std, size=(m, AUDIO_WIDTH)) + u[tone]
    return Instance(
        id=inst_id, kind=kind, label=label,
        passage=[int(t) for t in passage],
        question=list(QUESTION_TOKENS),
        choices=[[t] for t in CHOICE_TOKENS],
        frames=frames,
    )


def generate_dataset(config: GenConfig) -> dict:
    """Deterministic train/dev/test splits from one seeded stream."""
    rng = np.random.default_rng(config.seed)
    counts = {"train": config.n_train, "dev": config.n_dev, "test": config.n_test}
    return {
        split: [_gen_instance(rng, config, f"{split}-{i:05d}") for i in range(counts[split])]
        for split in SPLIT_NAMES
    }


def bayes_accuracy(config: GenConfig, modality: str) -> float:
    """Ideal accuracy given only one modality (or both) under the
    generative rule. Requires the tone pattern to be recoverable."""
    floor = 5.0 * config.noise_std / np.sqrt(AUDIO_WIDTH * config.frames_min)
    if config.tone_magnitude < floor:
        raise ValueError(
            f"tone_magnitude {config.tone_magnitude} below recoverability "
            f"guideline {floor:.4f}")
    rho = config.rho
    if modality == "text":
        return (1.0 - rho) * 1.0 + rho * 0.5
    if modality == "audio":
        return (1.0 - rho) * 0.25 + rho * 0.5
    if modality == "multimodal":
        return 1.0
    raise ValueError(f"unknown modality {modality!r}")


def decode_label_oracle(inst: Instance, config: GenConfig) -> int:
    """Rule-based decoder: read the key/pair token, read the tone by
    correlating the mean frame against the two patterns."""
    special = [t for t in inst.passage if t < FILLER_START]
    if len(special) != 1:
        raise ValueError(f"{inst.id}: expected exactly one key token, found {special}")
    token = special[0]
    if token in KEY_TOKENS:
        return KEY_TOKENS.index(token)
    u0, u1 = tone_patterns(config.tone_magnitude)
    mean_frame = np.asarray(inst.frames).mean(axis=0)
    tone = int(mean_frame @ u1 > mean_frame @ u0)
    return 2 * PAIR_TOKENS.index(token) + tone


# -----------------------------------------------------------------------------
# file formats: one JSON record per line, exact float round-trip
# -----------------------------------------------------------------------------


def write_split(path: str, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {
                "id": inst.id, "kind": inst.kind, "label": inst.label,
                "passage": inst.passage, "question": inst.question,
                "choices": inst.choices, "frames": inst.frames.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_split(path: str):
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(path, line_no, f"bad JSON ({e.msg})") from None
            try:
                frames = np.asarray(rec["frames"], dtype=np.float64)
                inst = Instance(
                    id=rec["id"], kind=rec["kind"], label=int(rec["label"]),
                    passage=[int(t) for t in rec["passage"]],
                    question=[int(t) for t in rec["question"]],
                    choices=[[int(t) for t in c] for c in rec["choices"]],
                    frames=frames,
                )
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetParseError(path, line_no, f"bad field ({e})") from None
            if inst.kind not in ("TEXT", "TONE") or not 0 <= inst.label <= 3:
                raise DatasetParseError(path, line_no, "invalid kind or label")
            if frames.ndim != 2 or frames.shape[1] != AUDIO_WIDTH:
                raise DatasetParseError(path, line_no, f"bad frame shape {frames.shape}")
            instances.append(inst)
    return instances


def write_dataset(data_dir: str, splits: dict, config: GenConfig):
    """Write the three split files plus a manifest with the ideal accuracies."""
    os.makedirs(data_dir, exist_ok=True)
    for split in SPLIT_NAMES:
        write_split(os.path.join(data_dir, f"{split}.jsonl"), splits[split])
    manifest = {
        "format_version": 1,
        "config": config.to_dict(),
        "ideal_accuracy": {m: bayes_accuracy(config, m)
                           for m in ("text", "audio", "multimodal")},
    }
    with open(os.path.join(data_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_manifest(data_dir: str) -> dict:
    with open(os.path.join(data_dir, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(data_dir: str) -> dict:
    return {split: read_split(os.path.join(data_dir, f"{split}.jsonl"))
            for split in SPLIT_NAMES}
