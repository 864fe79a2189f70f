"""Corpus data model, WAV ingestion and speaker-disjoint train/dev/test splitting."""

from __future__ import annotations

import json
import os
import wave
from collections import Counter, defaultdict
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DuplicateIdError,
    FormatError,
    InfeasibleError,
    ManifestError,
    UnknownLabelError,
    ValidationError,
)

DATASETS = ("KSUEmotion", "ANAD", "QCRI", "SARA", "MDAS", "KSU")
TASKS = ("gender", "emotion", "dialect")
TASK_LABELS = {
    "gender": ("M", "F"),
    "emotion": ("NEU", "SAD", "HAP", "SUR", "ANG", "QUES"),
    "dialect": ("MSA", "LEV", "GLF", "NOR", "EGY"),
}
# Some corpus label tables spell the Gulf dialect "GUL".
LABEL_ALIASES = {"dialect": {"GUL": "GLF"}}
TASK_ABBREV = {"g": "gender", "e": "emotion", "d": "dialect"}

SPLITS = ("train", "dev", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
SAMPLE_RATE = 16000


def normalize_label(task: str, label: str) -> str:
    label = LABEL_ALIASES.get(task, {}).get(label, label)
    if label not in TASK_LABELS[task]:
        raise UnknownLabelError(f"unknown {task} label {label!r}")
    return label


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    dataset: str
    speaker_id: str
    audio_path: str
    gender: str | None = None
    dialect: str | None = None
    emotion: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("empty utterance id")
        if self.dataset not in DATASETS:
            raise UnknownLabelError(f"unknown dataset {self.dataset!r}")
        if not self.speaker_id:
            raise ManifestError(f"utterance {self.id!r} has an empty speaker_id")
        for task in TASKS:
            value = getattr(self, task)
            if value is not None:
                object.__setattr__(self, task, normalize_label(task, value))
        if all(getattr(self, t) is None for t in TASKS):
            raise ManifestError(f"utterance {self.id!r} carries no gender, dialect or emotion label")

    def label(self, task: str) -> str | None:
        return getattr(self, task)

    def to_dict(self) -> dict:
        out = {"id": self.id, "dataset": self.dataset, "speaker_id": self.speaker_id,
               "audio_path": self.audio_path}
        for task in ("gender", "dialect", "emotion"):
            if getattr(self, task) is not None:
                out[task] = getattr(self, task)
        return out


class Corpus(Sequence):
    """Ordered, id-unique collection of :class:`UtteranceRecord`."""

    def __init__(self, records: Iterable[UtteranceRecord] = ()):
        self._records = tuple(records)
        self._by_id: dict[str, UtteranceRecord] = {}
        for rec in self._records:
            if rec.id in self._by_id:
                raise DuplicateIdError(f"duplicate utterance id {rec.id!r}")
            self._by_id[rec.id] = rec

    def __len__(self):
        return len(self._records)

    def __getitem__(self, index):
        return self._records[index]

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self._records)

    def __contains__(self, utt_id):
        return utt_id in self._by_id

    def get(self, utt_id: str) -> UtteranceRecord:
        return self._by_id[utt_id]

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self._records]

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self._records})


_RECORD_KEYS = {"id", "dataset", "speaker_id", "audio_path", "gender", "dialect", "emotion"}


def load_manifest(path: str | os.PathLike) -> Corpus:
    """Read a JSON-lines corpus manifest (one utterance per line).

    Relative ``audio_path`` values are resolved against the manifest's directory.
    Blank lines are skipped. Errors carry the 1-based line number.
    """
    path = Path(path)
    base = path.parent
    records = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ManifestError("expected a JSON object", line=lineno)
            unknown = set(obj) - _RECORD_KEYS
            if unknown:
                raise ManifestError(f"unexpected keys {sorted(unknown)}", line=lineno)
            for key in ("id", "dataset", "speaker_id", "audio_path"):
                if not isinstance(obj.get(key), str):
                    raise ManifestError(f"missing or non-string field {key!r}", line=lineno)
            utt_id = obj["id"]
            if utt_id in seen:
                raise DuplicateIdError(
                    f"duplicate id {utt_id!r} (first seen on line {seen[utt_id]})", line=lineno)
            seen[utt_id] = lineno
            audio = Path(obj["audio_path"])
            if not audio.is_absolute():
                audio = base / audio
            try:
                rec = UtteranceRecord(
                    id=utt_id,
                    dataset=obj["dataset"],
                    speaker_id=obj["speaker_id"],
                    audio_path=str(audio),
                    gender=obj.get("gender"),
                    dialect=obj.get("dialect"),
                    emotion=obj.get("emotion"),
                )
            except UnknownLabelError as exc:
                raise UnknownLabelError(str(exc), line=lineno) from exc
            except ManifestError as exc:
                raise ManifestError(str(exc), line=lineno) from exc
            records.append(rec)
    return Corpus(records)


def write_manifest(path: str | os.PathLike, corpus: Iterable[UtteranceRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec.to_dict()) + "\n")


# --------------------------------------------------------------------------- audio


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise FormatError("waveform amplitudes must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path: str | os.PathLike) -> Waveform:
    """Load a 16 kHz, mono, 16-bit PCM WAV file. No resampling or downmixing."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            if channels != 1:
                raise FormatError(f"{path}: expected mono audio, got {channels} channels")
            if width != 2:
                raise FormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
            if rate != SAMPLE_RATE:
                raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0)


def write_wav(path: str | os.PathLike, samples, sample_rate: int = SAMPLE_RATE, channels: int = 1) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM (interleaved if ``channels > 1``)."""
    ints = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(ints.astype("<i2").tobytes())


# --------------------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitManifest:
    assignment: dict[str, str]
    seed: int
    ratios: tuple[float, float, float]

    def ids(self, set_name: str) -> list[str]:
        return [u for u, s in self.assignment.items() if s == set_name]

    def dumps(self) -> str:
        lines = [json.dumps({"seed": self.seed, "ratios": list(self.ratios)})]
        lines += [json.dumps({"id": u, "set": s}) for u, s in self.assignment.items()]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def read_split_manifest(path: str | os.PathLike) -> SplitManifest:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty split manifest")
    try:
        header = json.loads(lines[0])
        seed, ratios = int(header["seed"]), tuple(float(r) for r in header["ratios"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad split header: {exc}", line=1) from exc
    assignment = {}
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
            utt, set_name = obj["id"], obj["set"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestError(f"bad split entry: {exc}", line=lineno) from exc
        if set_name not in SPLITS:
            raise ManifestError(f"unknown set {set_name!r}", line=lineno)
        if utt in assignment:
            raise DuplicateIdError(f"duplicate id {utt!r}", line=lineno)
        assignment[utt] = set_name
    return SplitManifest(assignment, seed, ratios)


def _check_ratios(ratios) -> np.ndarray:
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative fractions summing to 1, got {ratios!r}")
    return r


def _cells(corpus: Corpus) -> list[tuple[str, str, str]]:
    present = {(r.dataset, t, r.label(t)) for r in corpus for t in TASKS if r.label(t) is not None}
    order = {
        (d, t, c): (i, j, k)
        for i, d in enumerate(DATASETS)
        for j, t in enumerate(TASKS)
        for k, c in enumerate(TASK_LABELS[t])
    }
    return sorted(present, key=order.__getitem__)


def _speaker_cell_counts(corpus: Corpus, speakers: list[str], cells) -> np.ndarray:
    """Per-speaker counts for every cell, plus a final column of utterance totals."""
    s_index = {s: i for i, s in enumerate(speakers)}
    c_index = {c: j for j, c in enumerate(cells)}
    counts = np.zeros((len(speakers), len(cells) + 1))
    for rec in corpus:
        i = s_index[rec.speaker_id]
        counts[i, -1] += 1
        for task in TASKS:
            label = rec.label(task)
            if label is not None:
                counts[i, c_index[(rec.dataset, task, label)]] += 1
    return counts


def _row_cost(rows: np.ndarray, totals: np.ndarray, ratio: float) -> np.ndarray:
    # rows: (..., M) assigned counts; sum of squared proportion deviations over cells.
    return np.sum((rows / totals - ratio) ** 2, axis=-1)


def _objective(assigned: np.ndarray, totals: np.ndarray, r: np.ndarray) -> float:
    return float(sum(_row_cost(assigned[s], totals, r[s]) for s in range(3)))


def split_objective(corpus: Corpus, assignment: Mapping[str, str], ratios=DEFAULT_RATIOS) -> float:
    """Squared share deviation from the target ratio, summed over sets and over
    every (dataset, task, class) cell plus the overall utterance total.

    The total term breaks ties that small cells leave open (an empty test
    share can cost the same as one speaker in a five-speaker cell).
    """
    r = _check_ratios(ratios)
    cells = _cells(corpus)
    c_index = {c: j for j, c in enumerate(cells)}
    assigned = np.zeros((3, len(cells) + 1))
    for rec in corpus:
        s = SPLITS.index(assignment[rec.id])
        assigned[s, -1] += 1
        for task in TASKS:
            if rec.label(task) is not None:
                assigned[s, c_index[(rec.dataset, task, rec.label(task))]] += 1
    return _objective(assigned, assigned.sum(axis=0), r)


_TOL = 1e-12


def split_speaker_disjoint(corpus: Corpus, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitManifest:
    """Assign whole speakers to train/dev/test so every class of every dataset
    lands close to the target ratios.

    Greedy pass: speakers in descending utterance count (seeded tie-break), each
    placed in the set that most lowers the squared-deviation objective. Then
    hill climbing over single-speaker moves and two-speaker swaps until no move
    improves it. A set with a positive target ratio is never left empty.
    """
    r = _check_ratios(ratios)
    speakers = corpus.speakers()
    if len(speakers) < 3:
        raise InfeasibleError(f"need at least 3 speakers for a 3-way split, got {len(speakers)}")
    cells = _cells(corpus)
    counts = _speaker_cell_counts(corpus, speakers, cells)
    totals = counts.sum(axis=0)
    n_spk = len(speakers)

    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n_spk)
    utt_counts = Counter(rec.speaker_id for rec in corpus)
    order = sorted(range(n_spk), key=lambda i: (-utt_counts[speakers[i]], tiebreak[i]))

    owner = np.full(n_spk, -1)
    assigned = np.zeros((3, counts.shape[1]))
    for i in order:
        base = np.array([_row_cost(assigned[s], totals, r[s]) for s in range(3)])
        after = np.array([_row_cost(assigned[s] + counts[i], totals, r[s]) for s in range(3)])
        delta = after - base
        choice = int(np.flatnonzero(delta <= delta.min() + _TOL)[0])
        owner[i] = choice
        assigned[choice] += counts[i]

    members = np.bincount(owner, minlength=3)
    for s in range(3):
        if r[s] > 0 and members[s] == 0:
            # Cheapest donor speaker from a set that can spare one.
            best = None
            for i in range(n_spk):
                a = owner[i]
                if members[a] < 2:
                    continue
                trial = assigned.copy()
                trial[a] -= counts[i]
                trial[s] += counts[i]
                cost = _objective(trial, totals, r)
                if best is None or cost < best[0] - _TOL:
                    best = (cost, i)
            i = best[1]
            assigned[owner[i]] -= counts[i]
            members[owner[i]] -= 1
            owner[i] = s
            assigned[s] += counts[i]
            members[s] += 1

    _hill_climb(owner, assigned, counts, totals, r)

    spk_set = {speakers[i]: SPLITS[owner[i]] for i in range(n_spk)}
    assignment = {rec.id: spk_set[rec.speaker_id] for rec in corpus}
    return SplitManifest(assignment, int(seed), tuple(float(x) for x in ratios))


def _hill_climb(owner, assigned, counts, totals, r, max_rounds: int = 100_000) -> None:
    inv_t = 1.0 / totals
    for _ in range(max_rounds):
        members = np.bincount(owner, minlength=3)
        base = np.array([_row_cost(assigned[s], totals, r[s]) for s in range(3)])

        # Best single-speaker move.
        removal = np.array([
            _row_cost(assigned[owner[i]] - counts[i], totals, r[owner[i]]) - base[owner[i]]
            for i in range(len(owner))
        ])
        addition = np.stack(
            [_row_cost(assigned[b][None, :] + counts, totals, r[b]) - base[b] for b in range(3)], axis=1
        )
        delta = removal[:, None] + addition
        delta[np.arange(len(owner)), owner] = np.inf
        locked = (members[owner] < 2) & (r[owner] > 0)
        delta[locked, :] = np.inf
        flat = int(np.argmin(delta))
        if delta.flat[flat] < -_TOL:
            i, b = divmod(flat, 3)
            assigned[owner[i]] -= counts[i]
            assigned[b] += counts[i]
            owner[i] = b
            continue

        # Best two-speaker swap between different sets.
        best = (-_TOL, None)
        for a in range(3):
            for b in range(a + 1, 3):
                ia = np.flatnonzero(owner == a)
                ib = np.flatnonzero(owner == b)
                if ia.size == 0 or ib.size == 0:
                    continue
                ca = counts[ia] * inv_t
                cb = counts[ib] * inv_t
                ua = assigned[a] * inv_t - ca - r[a]  # a without speaker i
                ub = assigned[b] * inv_t - cb - r[b]  # b without speaker j
                cost_a = (ua ** 2).sum(1)[:, None] + 2 * ua @ cb.T + (cb ** 2).sum(1)[None, :]
                cost_b = (ub ** 2).sum(1)[None, :] + 2 * (ca @ ub.T) + (ca ** 2).sum(1)[:, None]
                swap = cost_a + cost_b - base[a] - base[b]
                k = int(np.argmin(swap))
                if swap.flat[k] < best[0]:
                    x, y = divmod(k, ib.size)
                    best = (swap.flat[k], (ia[x], ib[y], a, b))
        if best[1] is None:
            return
        i, j, a, b = best[1]
        assigned[a] += counts[j] - counts[i]
        assigned[b] += counts[i] - counts[j]
        owner[i], owner[j] = b, a


@dataclass
class SplitReport:
    counts: dict[tuple[str, str, str], dict[str, int]]
    set_totals: dict[str, int]
    ratios: tuple[float, float, float]
    set_deviation: dict[str, float]
    max_deviation: float
    speaker_overlap: bool
    overlapping_speakers: list[str] = field(default_factory=list)

    def deviation_points(self) -> tuple[float, ...]:
        """Per-set share minus target, in percentage points."""
        return tuple(100.0 * self.set_deviation[s] for s in SPLITS)

    def format_table(self) -> str:
        lines = ["dataset\ttask\tclass\t" + "\t".join(SPLITS)]
        for (dataset, task, cls), per_set in self.counts.items():
            lines.append(f"{dataset}\t{task}\t{cls}\t" + "\t".join(str(per_set[s]) for s in SPLITS))
        lines.append("total\t\t\t" + "\t".join(str(self.set_totals[s]) for s in SPLITS))
        lines.append("deviation_pts\t\t\t" + "\t".join(f"{p:+.2f}" for p in self.deviation_points()))
        lines.append(f"max_cell_deviation\t{self.max_deviation:.4f}")
        lines.append(f"speaker_overlap\t{str(self.speaker_overlap).lower()}")
        return "\n".join(lines)


def set_deviation(set_counts: Mapping[str, float], ratios=DEFAULT_RATIOS) -> dict[str, float]:
    """Achieved share of each set minus its target ratio (fractions)."""
    r = _check_ratios(ratios)
    total = float(sum(set_counts[s] for s in SPLITS))
    if total <= 0:
        raise ValidationError("no utterances to compare against target ratios")
    return {s: set_counts[s] / total - r[k] for k, s in enumerate(SPLITS)}


def validate_split(corpus: Corpus, manifest: SplitManifest) -> SplitReport:
    """Per-(dataset, task, class) counts per set, ratio deviations and speaker overlap."""
    missing = [u for u in corpus.ids if u not in manifest.assignment]
    if missing:
        raise ValidationError(f"{len(missing)} utterance(s) not covered by the split, e.g. {missing[0]!r}")
    extra = [u for u in manifest.assignment if u not in corpus]
    if extra:
        raise ValidationError(f"split references unknown utterance {extra[0]!r}")
    r = _check_ratios(manifest.ratios)

    counts = {cell: {s: 0 for s in SPLITS} for cell in _cells(corpus)}
    totals = {s: 0 for s in SPLITS}
    speaker_sets = defaultdict(set)
    for rec in corpus:
        s = manifest.assignment[rec.id]
        totals[s] += 1
        speaker_sets[rec.speaker_id].add(s)
        for task in TASKS:
            label = rec.label(task)
            if label is not None:
                counts[(rec.dataset, task, label)][s] += 1

    max_dev = 0.0
    for per_set in counts.values():
        n = sum(per_set.values())
        for k, s in enumerate(SPLITS):
            max_dev = max(max_dev, abs(per_set[s] / n - r[k]))
    overlap = sorted(spk for spk, sets in speaker_sets.items() if len(sets) > 1)
    return SplitReport(
        counts=counts,
        set_totals=totals,
        ratios=manifest.ratios,
        set_deviation=set_deviation(totals, manifest.ratios) if len(corpus) else {s: 0.0 for s in SPLITS},
        max_deviation=max_dev,
        speaker_overlap=bool(overlap),
        overlapping_speakers=overlap,
    )
