"""Cohort ingestion, deterministic stratified splitting, class weighting,
and the Mixup / label-smoothing batch transforms.

Feature files are UTF-8 CSV with header ``subject_id,label,f0,...,f{d-1}``;
label tokens are CN, MCI, or empty for unlabeled rows. A paired file stores
the speech block first and the MRI block after it in one row.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABELS = ("CN", "MCI")
LABEL_TO_INDEX = {"CN": 0, "MCI": 1}

SPEECH_DIM = 209
MRI_DIM = 6144


def derive_seed(seed: int, name: str) -> int:
    """Stable 63-bit child seed from (seed, name); hash-based, platform independent."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def one_hot_labels(label_indices, num_classes: int = 2) -> np.ndarray:
    idx = np.asarray(label_indices, dtype=int)
    out = np.zeros((idx.shape[0], num_classes))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


# ---------------------------------------------------------------------------
# Cohort model
# ---------------------------------------------------------------------------


@dataclass
class SubjectRecord:
    """One subject: label (CN / MCI / None) plus optional feature vectors."""

    subject_id: str
    label: str | None
    speech: np.ndarray | None = None
    mri: np.ndarray | None = None


@dataclass
class Cohort:
    records: list[SubjectRecord]
    speech_dim: int = SPEECH_DIM
    mri_dim: int = MRI_DIM

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.subject_id in seen:
                raise ValueError(f"duplicate subject_id {r.subject_id!r}")
            seen.add(r.subject_id)
            if r.speech is None and r.mri is None:
                raise ValueError(f"{r.subject_id}: no feature vector present")
            if r.speech is not None and r.speech.shape != (self.speech_dim,):
                raise ValueError(
                    f"{r.subject_id}: speech vector has {r.speech.shape[0]} values, "
                    f"expected {self.speech_dim}")
            if r.mri is not None and r.mri.shape != (self.mri_dim,):
                raise ValueError(
                    f"{r.subject_id}: mri vector has {r.mri.shape[0]} values, "
                    f"expected {self.mri_dim}")
            if r.label is not None and r.label not in LABELS:
                raise ValueError(f"{r.subject_id}: unknown label {r.label!r}")

    def __len__(self):
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.subject_id for r in self.records]

    def by_id(self) -> dict[str, SubjectRecord]:
        return {r.subject_id: r for r in self.records}

    def labeled_ids(self) -> list[str]:
        return [r.subject_id for r in self.records if r.label is not None]

    def labels_for(self, ids: list[str]) -> list[str]:
        index = self.by_id()
        out = []
        for sid in ids:
            label = index[sid].label
            if label is None:
                raise ValueError(f"{sid} is unlabeled")
            out.append(label)
        return out

    def label_indices(self, ids: list[str]) -> np.ndarray:
        return np.array([LABEL_TO_INDEX[lab] for lab in self.labels_for(ids)], dtype=int)

    def feature_matrix(self, modality: str, ids: list[str] | None = None) -> np.ndarray:
        """Stack one modality as an (n, d) matrix for the given ids (all by default)."""
        index = self.by_id()
        if ids is None:
            ids = self.ids()
        rows = []
        for sid in ids:
            rec = index.get(sid)
            if rec is None:
                raise ValueError(f"unknown subject_id {sid!r}")
            vec = rec.speech if modality == "speech" else rec.mri
            if vec is None:
                raise ValueError(f"{sid} has no {modality} features")
            rows.append(vec)
        return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

_SCHEMAS = ("speech", "mri", "paired")


def _schema_dims(schema: str, speech_dim: int, mri_dim: int) -> int:
    if schema == "speech":
        return speech_dim
    if schema == "mri":
        return mri_dim
    if schema == "paired":
        return speech_dim + mri_dim
    raise ValueError(f"unknown schema {schema!r}; expected one of {_SCHEMAS}")


def load_cohort(path, schema: str, speech_dim: int = SPEECH_DIM,
                mri_dim: int = MRI_DIM) -> Cohort:
    """Read and validate one feature CSV; errors carry the offending line number."""
    path = Path(path)
    d = _schema_dims(schema, speech_dim, mri_dim)
    expected_header = "subject_id,label," + ",".join(f"f{i}" for i in range(d))
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != expected_header:
            got = header.split(",")
            raise ValueError(
                f"{path}:1: bad header for schema {schema!r} "
                f"(expected {d} feature columns, got {max(len(got) - 2, 0)})")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != d + 2:
                raise ValueError(
                    f"{path}:{lineno}: row has {len(fields) - 2} feature values, expected {d}")
            sid, label_token = fields[0], fields[1]
            if sid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate subject_id {sid!r}")
            seen.add(sid)
            if label_token == "":
                label = None
            elif label_token in LABELS:
                label = label_token
            else:
                raise ValueError(f"{path}:{lineno}: unknown label token {label_token!r}")
            try:
                values = np.asarray(fields[2:], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise ValueError(f"{path}:{lineno}: non-finite feature value")
            if schema == "speech":
                rec = SubjectRecord(sid, label, speech=values)
            elif schema == "mri":
                rec = SubjectRecord(sid, label, mri=values)
            else:
                rec = SubjectRecord(sid, label, speech=values[:speech_dim],
                                    mri=values[speech_dim:])
            records.append(rec)
    return Cohort(records, speech_dim=speech_dim, mri_dim=mri_dim)


def load_paired(speech_path, mri_path, speech_dim: int = SPEECH_DIM,
                mri_dim: int = MRI_DIM) -> Cohort:
    """Join per-modality CSVs of the same subjects into one paired cohort.

    Both files must cover exactly the same subject ids with identical labels;
    keeping the modalities in separate files lets speech-only consumers run
    with the MRI file absent.
    """
    speech = load_cohort(speech_path, "speech", speech_dim=speech_dim)
    mri = load_cohort(mri_path, "mri", mri_dim=mri_dim)
    mri_by_id = mri.by_id()
    missing = [sid for sid in speech.ids() if sid not in mri_by_id]
    extra = [sid for sid in mri.ids() if sid not in set(speech.ids())]
    if missing or extra:
        raise ValueError(
            f"paired files disagree on subjects: {len(missing)} only in "
            f"{speech_path}, {len(extra)} only in {mri_path}")
    records = []
    for rec in speech.records:
        other = mri_by_id[rec.subject_id]
        if other.label != rec.label:
            raise ValueError(f"{rec.subject_id}: label mismatch between modalities "
                             f"({rec.label!r} vs {other.label!r})")
        records.append(SubjectRecord(rec.subject_id, rec.label,
                                     speech=rec.speech, mri=other.mri))
    return Cohort(records, speech_dim=speech_dim, mri_dim=mri_dim)


def save_cohort(cohort: Cohort, path, schema: str) -> None:
    """Write one modality (or the paired concatenation) as CSV."""
    path = Path(path)
    d = _schema_dims(schema, cohort.speech_dim, cohort.mri_dim)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,label," + ",".join(f"f{i}" for i in range(d)) + "\n")
        for rec in cohort.records:
            if schema == "speech":
                vec = rec.speech
            elif schema == "mri":
                vec = rec.mri
            else:
                if rec.speech is None or rec.mri is None:
                    raise ValueError(f"{rec.subject_id}: paired export needs both modalities")
                vec = np.concatenate([rec.speech, rec.mri])
            if vec is None:
                raise ValueError(f"{rec.subject_id}: missing {schema} features")
            label_token = rec.label or ""
            # repr() is the shortest round-trip decimal for python floats
            fh.write(rec.subject_id + "," + label_token + ","
                     + ",".join(repr(float(v)) for v in vec) + "\n")


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass
class Standardizer:
    """Per-column mean/std transform; zero-variance columns get std 1."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std <= 0.0, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Stratified splitting / folding
# ---------------------------------------------------------------------------


@dataclass
class SplitAssignment:
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    seed: int
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def part_of(self) -> dict[str, str]:
        out = {}
        for part, ids in (("train", self.train_ids), ("val", self.val_ids),
                          ("test", self.test_ids)):
            for sid in ids:
                out[sid] = part
        return out


def _largest_remainder(quotas: dict[str, float], total: int) -> dict[str, int]:
    """Integer allocation of `total` across keys proportional to quotas."""
    floors = {k: int(np.floor(q)) for k, q in quotas.items()}
    leftover = total - sum(floors.values())
    if leftover < 0:
        raise ValueError("allocation total below quota floors")
    remainders = sorted(quotas, key=lambda k: (-(quotas[k] - floors[k]), k))
    for k in remainders[:leftover]:
        floors[k] += 1
    return floors


def stratified_split(cohort: Cohort, fractions=(0.70, 0.15, 0.15),
                     seed: int = 42) -> SplitAssignment:
    """Deterministic stratified train/val/test split over labeled subjects.

    Per-class counts come from largest-remainder rounding, with the test and
    validation parts allocated first (each sized round(f * N) on the full
    labeled count) and train receiving the remainder.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be 3 non-negative values summing to 1, got {fractions}")
    ids = sorted(cohort.labeled_ids())
    if not ids:
        raise ValueError("cohort has no labeled subjects")
    labels = dict(zip(ids, cohort.labels_for(ids)))
    by_class: dict[str, list[str]] = {lab: [] for lab in LABELS}
    for sid in ids:
        by_class[labels[sid]].append(sid)
    for lab, members in by_class.items():
        if 0 < len(members) < 3:
            raise ValueError(f"class {lab} has only {len(members)} subjects (minimum 3)")
    by_class = {lab: members for lab, members in by_class.items() if members}

    n = len(ids)
    counts = {lab: len(m) for lab, m in by_class.items()}
    test_alloc = _largest_remainder({lab: fractions[2] * c for lab, c in counts.items()},
                                    round_half_up(fractions[2] * n))
    val_alloc = _largest_remainder({lab: fractions[1] * c for lab, c in counts.items()},
                                   round_half_up(fractions[1] * n))
    for lab in counts:
        if test_alloc[lab] + val_alloc[lab] > counts[lab]:
            raise ValueError(f"class {lab} too small for requested fractions")

    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for lab in LABELS:
        if lab not in by_class:
            continue
        members = list(by_class[lab])
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        t, v = test_alloc[lab], val_alloc[lab]
        test.extend(shuffled[:t])
        val.extend(shuffled[t:t + v])
        train.extend(shuffled[t + v:])
    return SplitAssignment(train_ids=sorted(train), val_ids=sorted(val),
                           test_ids=sorted(test), seed=seed, fractions=fractions)


@dataclass
class FoldAssignment:
    fold_of: dict[str, int]
    k: int
    seed: int

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(sid for sid, f in self.fold_of.items() if f == fold)

    def canonical_json(self) -> str:
        return json.dumps({"k": self.k, "fold_of": dict(sorted(self.fold_of.items()))},
                          sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def stratified_kfold(ids: list[str], labels: list[str], k: int = 5,
                     seed: int = 0) -> FoldAssignment:
    """Deterministic stratified k-fold assignment with balanced fold sizes."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(ids) != len(labels):
        raise ValueError("ids/labels length mismatch")
    by_class: dict[str, list[str]] = {}
    for sid, lab in zip(ids, labels):
        if lab not in LABELS:
            raise ValueError(f"unknown label {lab!r}")
        by_class.setdefault(lab, []).append(sid)
    for lab, members in by_class.items():
        if len(members) < k:
            raise ValueError(f"class {lab} has {len(members)} subjects, fewer than k={k}")

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    extra_cursor = 0  # rotates so per-class remainders spread over folds
    for lab in LABELS:
        if lab not in by_class:
            continue
        members = sorted(by_class[lab])
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        n_c = len(shuffled)
        base, extra = divmod(n_c, k)
        sizes = [base] * k
        for j in range(extra):
            sizes[(extra_cursor + j) % k] += 1
        extra_cursor = (extra_cursor + extra) % k
        pos = 0
        for fold, size in enumerate(sizes):
            for sid in shuffled[pos:pos + size]:
                fold_of[sid] = fold
            pos += size
    return FoldAssignment(fold_of=fold_of, k=k, seed=seed)


def class_weights(labels: list[str]) -> dict[str, float]:
    """Inverse-frequency weights w_c = N / (2 * N_c); both classes required."""
    labels = list(labels)
    n = len(labels)
    weights = {}
    for lab in LABELS:
        n_c = labels.count(lab)
        if n_c == 0:
            raise ValueError(f"class {lab} missing from labels")
        weights[lab] = n / (2.0 * n_c)
    return weights


def class_weight_vector(y: np.ndarray) -> np.ndarray:
    """class_weights as a (2,) array indexable by integer class."""
    y = np.asarray(y, dtype=int)
    w = class_weights([LABELS[c] for c in y])
    return np.array([w[lab] for lab in LABELS])


def export_split(split: SplitAssignment, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": split.seed,
        "fractions": list(split.fractions),
        "assignment": dict(sorted(split.part_of().items())),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_split(path) -> SplitAssignment:
    payload = json.loads(Path(path).read_text())
    parts: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for sid, part in payload["assignment"].items():
        if part not in parts:
            raise ValueError(f"{path}: unknown part {part!r} for {sid!r}")
        parts[part].append(sid)
    return SplitAssignment(train_ids=sorted(parts["train"]), val_ids=sorted(parts["val"]),
                           test_ids=sorted(parts["test"]), seed=int(payload["seed"]),
                           fractions=tuple(payload.get("fractions", (0.70, 0.15, 0.15))))


def export_folds(folds: FoldAssignment, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"seed": folds.seed, "k": folds.k,
               "fold_of": dict(sorted(folds.fold_of.items()))}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Batch transforms
# ---------------------------------------------------------------------------


def mixup_batch(x: np.ndarray, y: np.ndarray, alpha: float = 0.3,
                rng: np.random.Generator | None = None,
                lam: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of the batch with a random permutation of itself.

    One lambda ~ Beta(alpha, alpha) is drawn per batch; `lam` overrides the
    draw (tests / degenerate configs).
    """
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be row-aligned")
    if rng is None and lam is None:
        raise ValueError("mixup needs an rng (or an explicit lam)")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(x.shape[0]) if rng is not None else np.arange(x.shape[0])[::-1]
    x_mix = lam * x + (1.0 - lam) * x[perm]
    y_mix = lam * y + (1.0 - lam) * y[perm]
    return x_mix, y_mix


def smooth_labels(y: np.ndarray, epsilon: float = 0.10) -> np.ndarray:
    """Two-class label smoothing: (1 - eps) * y + eps / 2."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError("smooth_labels expects (n, 2) targets")
    return (1.0 - epsilon) * y + epsilon / 2.0
