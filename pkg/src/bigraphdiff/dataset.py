"""Motion sequence data model, normalization, file I/O, and a procedural
two-person interaction generator for desk-scale experiments.

Sequences are arrays of shape N x k x 3 x 2 (frames, joints, xyz,
persons).  The JSON-lines file format stores the person axis before the
joints axis for readability: frames is N x 2 x k x [x, y, z].
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError, ParseError, SchemaError

_RECORD_FIELDS = {"label", "fps", "torso_index", "frames", "split", "normalized"}


@dataclass
class MotionSequence:
    frames: np.ndarray          # N x k x 3 x 2
    label: str
    fps: int = 10
    torso_index: int = 0
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[2] != 3 or self.frames.shape[3] != 2:
            raise SchemaError(f"frames must be N x k x 3 x 2, got {self.frames.shape}")
        n, k = self.frames.shape[:2]
        if n < 1 or k < 2:
            raise SchemaError(f"need N >= 1 and k >= 2, got N={n}, k={k}")
        if not 0 <= self.torso_index < k:
            raise SchemaError(f"torso_index {self.torso_index} outside 0..{k - 1}")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_joints(self):
        return self.frames.shape[1]


@dataclass
class LabeledDataset:
    sequences: list
    classes: list
    split: list                  # "train" / "test" per sequence
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for seq in self.sequences:
            if seq.label not in self.classes:
                raise DataError(f"label {seq.label!r} not in classes {self.classes}")
        if len(self.split) != len(self.sequences):
            raise DataError("split assignment length mismatch")

    def subset(self, which):
        return [s for s, sp in zip(self.sequences, self.split) if sp == which]

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")


def normalize_sequence(seq):
    """Global mean removal, Frobenius-norm scaling, then per-frame
    centering on the midpoint of the two torso joints."""
    if seq.normalized:
        raise DataError("sequence is already normalized")
    x = seq.frames - seq.frames.mean(axis=(0, 1, 3), keepdims=True)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise DataError("degenerate sequence: zero Frobenius norm")
    x = x / norm
    torso_mid = x[:, seq.torso_index, :, :].mean(axis=-1)   # N x 3
    x = x - torso_mid[:, None, :, None]
    return replace(seq, frames=x, normalized=True)


# -- procedural generator ----------------------------------------------------

@dataclass
class GeneratorSpec:
    classes: list = field(default_factory=lambda: ["approach", "circle", "wave"])
    joints: int = 5              # torso, head, left hand, right hand, pelvis
    num_frames: int = 16
    fps: int = 10
    train_per_class: int = 100
    test_per_class: int = 30
    jitter: float = 0.15
    noise: float = 0.01
    seed: int = 0

    def to_dict(self):
        return {
            "classes": list(self.classes), "joints": self.joints,
            "num_frames": self.num_frames, "fps": self.fps,
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class,
            "jitter": self.jitter, "noise": self.noise, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _skeleton(center, facing, arm_raise=0.0):
    """Five joints around a center point; facing is a unit xy direction."""
    cx, cy, cz = center
    fx, fy = facing
    return np.array([
        [cx, cy, cz + 1.0],                       # torso
        [cx, cy, cz + 1.6],                       # head
        [cx - 0.3 * fy, cy + 0.3 * fx, cz + 1.0 + 0.6 * arm_raise],  # left hand
        [cx + 0.3 * fy, cy - 0.3 * fx, cz + 1.0],  # right hand
        [cx, cy, cz + 0.6],                       # pelvis
    ])


def _program(label, n, rng, jitter):
    """Two-person joint trajectories for one synthetic class."""
    t = np.linspace(0.0, 1.0, n)
    j = lambda scale: 1.0 + scale * rng.uniform(-jitter, jitter)
    phase = rng.uniform(-jitter, jitter)
    frames = np.zeros((n, 5, 3, 2))
    if label == "approach":
        # walk toward each other along x with a small step bob
        gap = 2.0 * j(1.0)
        speed = 0.8 * j(1.0)
        bob = 0.05 * np.sin(2.0 * np.pi * (4.0 * t + phase))
        for i, ti in enumerate(t):
            x1 = -gap + speed * ti * gap
            x2 = gap - speed * ti * gap
            frames[i, :, :, 0] = _skeleton((x1, 0.0, bob[i]), (1.0, 0.0))
            frames[i, :, :, 1] = _skeleton((x2, 0.0, bob[i]), (-1.0, 0.0))
    elif label == "circle":
        # orbit a common center on opposite sides
        radius = 1.5 * j(1.0)
        turns = 0.75 * j(1.0)
        for i, ti in enumerate(t):
            ang = 2.0 * np.pi * (turns * ti + phase)
            for p, off in ((0, 0.0), (1, np.pi)):
                a = ang + off
                center = (radius * np.cos(a), radius * np.sin(a), 0.0)
                frames[i, :, :, p] = _skeleton(center, (-np.sin(a), np.cos(a)))
    elif label == "wave":
        # person 1 waves a raised hand; person 2 stands still
        freq = 3.0 * j(1.0)
        for i, ti in enumerate(t):
            raise_amt = min(1.0, 3.0 * ti) * (1.0 + 0.3 * np.sin(2 * np.pi * (freq * ti + phase)))
            frames[i, :, :, 0] = _skeleton((-1.0, 0.0, 0.0), (1.0, 0.0), arm_raise=raise_amt)
            frames[i, :, :, 1] = _skeleton((1.0, 0.0, 0.0), (-1.0, 0.0))
    else:
        raise ConfigurationError(f"unknown synthetic class {label!r}")
    return frames


def generate_synthetic_dataset(spec, rng=None):
    """Labeled, normalized two-person sequences from parametric programs."""
    if len(spec.classes) < 2:
        raise ConfigurationError("need at least 2 classes")
    if spec.joints != 5:
        raise ConfigurationError("the parametric programs define exactly 5 joints")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sequences, split = [], []
    for label in spec.classes:
        for idx in range(spec.train_per_class + spec.test_per_class):
            frames = _program(label, spec.num_frames, rng, spec.jitter)
            frames = frames + spec.noise * rng.standard_normal(frames.shape)
            seq = MotionSequence(frames, label=label, fps=spec.fps, torso_index=0)
            sequences.append(normalize_sequence(seq))
            split.append("train" if idx < spec.train_per_class else "test")
    return LabeledDataset(
        sequences=sequences,
        classes=list(spec.classes),
        split=split,
        provenance={"generator": spec.to_dict()},
    )


# -- JSON-lines I/O ----------------------------------------------------------

def write_sequences(dataset, path):
    with open(path, "w", encoding="utf-8") as f:
        for seq, sp in zip(dataset.sequences, dataset.split):
            record = {
                "label": seq.label,
                "fps": seq.fps,
                "torso_index": seq.torso_index,
                "normalized": seq.normalized,
                "split": sp,
                # person axis first in the file: N x 2 x k x 3
                "frames": np.transpose(seq.frames, (0, 3, 1, 2)).tolist(),
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_sequences(path):
    sequences, split = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            unknown = set(record) - _RECORD_FIELDS
            if unknown:
                raise SchemaError(f"line {lineno}: unknown fields {sorted(unknown)}")
            if "label" not in record:
                raise SchemaError(f"line {lineno}: missing label")
            for required in ("fps", "torso_index", "frames"):
                if required not in record:
                    raise SchemaError(f"line {lineno}: missing {required}")
            frames = np.asarray(record["frames"], dtype=np.float64)
            if frames.ndim != 4 or frames.shape[1] != 2 or frames.shape[3] != 3:
                raise SchemaError(
                    f"line {lineno}: frames must be N x 2 x k x 3, got {frames.shape}"
                )
            sequences.append(MotionSequence(
                frames=np.transpose(frames, (0, 2, 3, 1)),
                label=record["label"],
                fps=record["fps"],
                torso_index=record["torso_index"],
                normalized=record.get("normalized", False),
            ))
            split.append(record.get("split", "train"))
    if not sequences:
        raise SchemaError("dataset file contains no sequences (need at least one)")
    classes = sorted({s.label for s in sequences})
    return LabeledDataset(sequences=sequences, classes=classes, split=split,
                          provenance={"file": str(path)})
