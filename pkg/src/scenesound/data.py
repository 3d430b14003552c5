"""Annotations, frame targets, clip indexes and the synthetic corpus.

File formats (tab separated, UTF-8):

* annotation: ``onset  offset  label`` per line, or ``scene  onset  offset
  label``; blank lines and ``#`` comments are skipped.
* clip index: ``clip_id  audio_path  scene  fold``; relative audio paths are
  resolved against the index file's directory.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import AudioClip, FeatureConfig, log_mel, read_wav, write_wav

_EDGE_TOL = 1e-9


@dataclass(frozen=True, order=True)
class EventAnnotation:
    onset: float
    offset: float
    label: str

    def __post_init__(self):
        if not (0 <= self.onset < self.offset):
            raise ValueError(f"invalid event interval [{self.onset}, {self.offset}) for {self.label!r}")


@dataclass
class ClipRecord:
    clip_id: str
    audio_path: str | None
    scene: str
    events: list
    fold: int
    audio: AudioClip | None = None


class Vocabulary:
    """Bijective label <-> index map."""

    def __init__(self, labels):
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("vocabulary labels must be unique")
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label):
        try:
            return self.index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary") from None

    def __iter__(self):
        return iter(self.labels)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.labels == other.labels


# -- annotations -----------------------------------------------------------


def parse_event_annotations(text: str, expected_scene: str | None = None) -> list:
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        cols = line.rstrip("\r\n").split("\t")
        if len(cols) == 4:
            scene, cols = cols[0].strip(), cols[1:]
            if expected_scene is not None and scene != expected_scene:
                raise ValueError(f"line {lineno}: scene {scene!r} does not match clip scene {expected_scene!r}")
        if len(cols) != 3:
            raise ValueError(f"line {lineno}: expected 3 or 4 tab-separated columns, got {len(cols)}")
        try:
            onset, offset = float(cols[0]), float(cols[1])
        except ValueError:
            raise ValueError(f"line {lineno}: onset/offset must be numbers") from None
        label = cols[2].strip()
        if not label:
            raise ValueError(f"line {lineno}: empty label")
        if offset <= onset:
            raise ValueError(f"line {lineno}: offset {offset} is not after onset {onset}")
        if onset < 0:
            raise ValueError(f"line {lineno}: negative onset")
        events.append(EventAnnotation(onset, offset, label))
    events.sort(key=lambda e: (e.onset, e.offset, e.label))
    return events


def format_event_annotations(events) -> str:
    return "".join(f"{float(e.onset)!r}\t{float(e.offset)!r}\t{e.label}\n" for e in events)


def read_event_annotations(path, expected_scene=None) -> list:
    return parse_event_annotations(Path(path).read_text(encoding="utf-8"), expected_scene)


def event_roll(events, vocab, n_frames: int, cfg: FeatureConfig) -> np.ndarray:
    """Binary (M, T) targets on the hop grid.

    Frame t covers [t*hop, (t+1)*hop); it is active for an event when the
    event's [onset, offset) interval overlaps it.
    """
    vocab = vocab if isinstance(vocab, Vocabulary) else Vocabulary(vocab)
    unknown = sorted({e.label for e in events} - set(vocab.labels))
    if unknown:
        raise ValueError(f"labels not in the event vocabulary: {unknown}")
    hop = cfg.hop_ms / 1000.0
    roll = np.zeros((len(vocab), n_frames), dtype=np.uint8)
    for e in events:
        first = max(0, math.floor(e.onset / hop + _EDGE_TOL))
        last = min(n_frames, math.ceil(e.offset / hop - _EDGE_TOL))
        if last > first:
            roll[vocab[e.label], first:last] = 1
    return roll


def roll_to_events(roll, vocab, cfg: FeatureConfig) -> list:
    """Inverse of :func:`event_roll`: one event per run of active frames."""
    vocab = vocab if isinstance(vocab, Vocabulary) else Vocabulary(vocab)
    hop = cfg.hop_ms / 1000.0
    events = []
    for m, row in enumerate(np.asarray(roll, dtype=np.int8)):
        edges = np.diff(np.concatenate([[0], row, [0]]))
        for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            events.append(EventAnnotation(round(float(start * hop), 6), round(float(stop * hop), 6), vocab.labels[m]))
    events.sort(key=lambda e: (e.onset, e.offset, e.label))
    return events


# -- clip index ------------------------------------------------------------


def read_clip_index(path) -> list:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValueError(f"{path}:{lineno}: expected clip_id, audio_path, scene, fold")
        clip_id, audio, scene, fold = (c.strip() for c in cols)
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = path.parent / audio_path
        try:
            fold_i = int(fold)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: fold must be an integer") from None
        records.append(ClipRecord(clip_id, str(audio_path), scene, [], fold_i))
    return records


def write_clip_index(path, records, relative_to=None) -> None:
    base = Path(relative_to) if relative_to else Path(path).parent
    lines = []
    for r in records:
        audio = Path(r.audio_path)
        try:
            audio = audio.relative_to(base)
        except ValueError:
            pass
        lines.append(f"{r.clip_id}\t{audio.as_posix()}\t{r.scene}\t{r.fold}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_corpus(index_path, annotations_dir=None) -> list:
    """Read the clip index, each clip's ``<clip_id>.ann`` file and its audio."""
    index_path = Path(index_path)
    ann_dir = Path(annotations_dir) if annotations_dir else index_path.parent / "annotations"
    records = read_clip_index(index_path)
    for r in records:
        ann = ann_dir / f"{r.clip_id}.ann"
        r.events = read_event_annotations(ann, expected_scene=r.scene) if ann.exists() else []
        r.audio = read_wav(r.audio_path, clip_id=r.clip_id)
    return records


def worker_count() -> int:
    cap = os.environ.get("SCENESOUND_THREADS")
    if cap:
        try:
            return max(1, int(cap))
        except ValueError:
            raise ValueError("SCENESOUND_THREADS must be an integer") from None
    return os.cpu_count() or 1


# -- feature tensors -------------------------------------------------------


@dataclass
class Dataset:
    """Stacked per-clip arrays ready for training and scoring."""

    features: np.ndarray  # (n, n_mels, T)
    rolls: np.ndarray  # (n, M, T) uint8
    scenes: np.ndarray  # (n,) scene indices
    folds: np.ndarray  # (n,)
    clip_ids: list
    events: Vocabulary
    scene_vocab: Vocabulary
    feature_cfg: FeatureConfig = field(default_factory=FeatureConfig)

    def __len__(self):
        return len(self.clip_ids)

    def subset(self, mask_or_idx) -> "Dataset":
        idx = np.arange(len(self))[mask_or_idx]
        return Dataset(
            self.features[idx], self.rolls[idx], self.scenes[idx], self.folds[idx],
            [self.clip_ids[i] for i in idx], self.events, self.scene_vocab, self.feature_cfg,
        )


def build_dataset(records, cfg: FeatureConfig, events=None, scenes=None, threads=None) -> Dataset:
    events = events if isinstance(events, Vocabulary) else Vocabulary(
        events if events is not None else sorted({e.label for r in records for e in r.events})
    )
    scenes = scenes if isinstance(scenes, Vocabulary) else Vocabulary(
        scenes if scenes is not None else sorted({r.scene for r in records})
    )
    if not records:
        raise ValueError("no clips to build a dataset from")
    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        feats = list(pool.map(lambda r: log_mel(r.audio, cfg).data, records))
    lengths = {f.shape[1] for f in feats}
    if len(lengths) != 1:
        raise ValueError(f"clips have differing frame counts {sorted(lengths)}; all clips must share one length")
    T = lengths.pop()
    rolls = np.stack([event_roll(r.events, events, T, cfg) for r in records])
    return Dataset(
        features=np.stack(feats),
        rolls=rolls,
        scenes=np.array([scenes[r.scene] for r in records], dtype=np.int64),
        folds=np.array([r.fold for r in records], dtype=np.int64),
        clip_ids=[r.clip_id for r in records],
        events=events,
        scene_vocab=scenes,
        feature_cfg=cfg,
    )


# -- synthetic corpus ------------------------------------------------------


@dataclass
class EventSignature:
    kind: str  # tone | chirp | clicks | am | noise
    freq: float
    freq2: float = 0.0


DEFAULT_SCENES = ["home", "residential_area", "city_center", "office"]
DEFAULT_EVENTS = [
    "keyboard_typing", "mouse_clicking", "car", "bird_singing",
    "people_talking", "dishes", "wind_blowing", "brakes_squeaking",
]
# keyboard_typing and dishes sound nearly alike but live in different scenes.
DEFAULT_SIGNATURES = [
    EventSignature("clicks", 2500.0),
    EventSignature("clicks", 5200.0),
    EventSignature("noise", 150.0, 600.0),
    EventSignature("chirp", 3000.0, 4500.0),
    EventSignature("am", 400.0, 4.0),
    EventSignature("clicks", 2700.0),
    EventSignature("noise", 800.0, 1600.0),
    EventSignature("tone", 3600.0),
]
DEFAULT_PRIORS = [
    # kbd  mouse car  bird talk dish wind brakes
    [0.15, 0.10, 0.05, 0.10, 0.70, 0.80, 0.05, 0.00],  # home
    [0.00, 0.00, 0.70, 0.80, 0.30, 0.00, 0.50, 0.30],  # residential_area
    [0.00, 0.00, 0.90, 0.20, 0.60, 0.05, 0.20, 0.70],  # city_center
    [0.90, 0.80, 0.00, 0.00, 0.50, 0.10, 0.00, 0.00],  # office
]
# (spectral slope exponent, emphasized band low/high Hz, band gain)
DEFAULT_BEDS = [
    (1.0, 200.0, 500.0, 3.0),
    (2.0, 1000.0, 3000.0, 2.0),
    (0.3, 60.0, 250.0, 6.0),
    (1.0, 4000.0, 6000.0, 3.0),
]


@dataclass
class SynthSpec:
    scenes: list = field(default_factory=lambda: list(DEFAULT_SCENES))
    events: list = field(default_factory=lambda: list(DEFAULT_EVENTS))
    priors: list = field(default_factory=lambda: [row[:] for row in DEFAULT_PRIORS])
    signatures: list = field(default_factory=lambda: list(DEFAULT_SIGNATURES))
    beds: list = field(default_factory=lambda: list(DEFAULT_BEDS))
    clips_per_scene: int = 40
    clip_seconds: float = 2.0
    sample_rate: int = 16000
    n_folds: int = 4
    bed_rms: float = 0.02
    event_gain: tuple = (0.05, 0.3)
    event_seconds: tuple = (0.2, 0.8)
    max_instances: int = 2

    def __post_init__(self):
        P = np.asarray(self.priors, dtype=float)
        if P.shape != (len(self.scenes), len(self.events)):
            raise ValueError(f"prior table must be {len(self.scenes)}x{len(self.events)}, got {P.shape}")
        if np.any((P < 0) | (P > 1)) or not np.all(np.isfinite(P)):
            raise ValueError("event probabilities must lie in [0, 1]")
        if len(self.signatures) != len(self.events):
            raise ValueError("one signature per event type")
        if len(self.beds) != len(self.scenes):
            raise ValueError("one noise bed per scene")
        if self.event_seconds[1] > self.clip_seconds:
            raise ValueError("events longer than the clip")


def _shaped_noise(rng, n, sr, slope, band_lo, band_hi, band_gain):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sr)
    shape = 1.0 / np.maximum(f, 20.0) ** (slope / 2)
    shape = shape * np.where((f >= band_lo) & (f <= band_hi), band_gain, 1.0)
    x = np.fft.irfft(spec * shape, n)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


def _envelope(n, sr, ramp_s=0.01):
    ramp = min(int(ramp_s * sr), n // 2)
    env = np.ones(n)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp :] = r[::-1]
    return env


def _event_wave(rng, sig: EventSignature, n, sr):
    t = np.arange(n) / sr
    if sig.kind == "tone":
        x = np.sin(2 * np.pi * sig.freq * t) + 0.3 * np.sin(4 * np.pi * sig.freq * t)
    elif sig.kind == "chirp":
        dur = n / sr
        k = (sig.freq2 - sig.freq) / dur
        x = np.sin(2 * np.pi * (sig.freq * t + 0.5 * k * t**2))
    elif sig.kind == "am":
        x = np.sin(2 * np.pi * sig.freq * t) * (0.6 + 0.4 * np.sin(2 * np.pi * sig.freq2 * t))
        x += 0.5 * np.sin(2 * np.pi * 2 * sig.freq * t)
    elif sig.kind == "clicks":
        period = int(0.05 * sr)
        burst = int(0.012 * sr)
        gate = (np.arange(n) % period) < burst
        x = np.sin(2 * np.pi * sig.freq * t) * gate
    elif sig.kind == "noise":
        x = _shaped_noise(rng, n, sr, 0.0, sig.freq, sig.freq2, 30.0)
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n, 1.0 / sr)
        spec[(f < sig.freq) | (f > sig.freq2)] *= 0.05
        x = np.fft.irfft(spec, n)
    else:
        raise ValueError(f"unknown signature kind {sig.kind!r}")
    x = x / (np.sqrt(np.mean(x**2)) + 1e-12)
    return x * _envelope(n, sr)


def synth_clip(spec: SynthSpec, scene_idx: int, clip_id: str, rng) -> tuple:
    """Generate one clip; returns (AudioClip, events)."""
    sr = spec.sample_rate
    n = int(round(spec.clip_seconds * sr))
    audio = spec.bed_rms * _shaped_noise(rng, n, sr, *spec.beds[scene_idx])
    events = []
    for m, prob in enumerate(spec.priors[scene_idx]):
        if rng.random() >= prob:
            continue
        for _ in range(int(rng.integers(1, spec.max_instances + 1))):
            dur = round(float(rng.uniform(*spec.event_seconds)), 3)
            onset = round(float(rng.uniform(0.0, spec.clip_seconds - dur)), 3)
            offset = round(onset + dur, 3)
            start, stop = int(round(onset * sr)), int(round(offset * sr))
            gain = float(rng.uniform(*spec.event_gain))
            audio[start:stop] += gain * _event_wave(rng, spec.signatures[m], stop - start, sr)
            events.append(EventAnnotation(onset, offset, spec.events[m]))
    peak = np.abs(audio).max()
    if peak > 0.99:
        audio *= 0.99 / peak
    events.sort(key=lambda e: (e.onset, e.offset, e.label))
    return AudioClip(audio, sr, clip_id), events


def synth_corpus(spec: SynthSpec | None = None, seed: int = 0) -> list:
    """Deterministic synthetic corpus; folds are balanced per scene."""
    spec = spec or SynthSpec()
    records = []
    for s, scene in enumerate(spec.scenes):
        for j in range(spec.clips_per_scene):
            clip_id = f"{scene}_{j:03d}"
            rng = np.random.default_rng([seed, s, j])
            audio, events = synth_clip(spec, s, clip_id, rng)
            fold = j % spec.n_folds + 1
            records.append(ClipRecord(clip_id, None, scene, events, fold, audio))
    return records


def write_corpus(records, out_dir, bits: int = 16) -> Path:
    """Write WAVs, ``.ann`` annotations and ``index.tsv``; returns the index path."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    for r in records:
        wav = out / "audio" / f"{r.clip_id}.wav"
        write_wav(wav, r.audio, bits=bits)
        r.audio_path = str(wav)
        (out / "annotations" / f"{r.clip_id}.ann").write_text(format_event_annotations(r.events), encoding="utf-8")
    index = out / "index.tsv"
    write_clip_index(index, records, relative_to=out)
    return index
