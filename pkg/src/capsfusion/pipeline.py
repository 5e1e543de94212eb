"""Corpus ingestion, keyword filtering, rule-based annotation and featurization.

Records arrive as JSON Lines from a local archive. Relevance is decided by
case-insensitive substring matching against a collection keyword list, then a
stop list removes news, attack reports and anything carrying a URL. The
annotator labels what survives, and featurize() turns a record into the
7-entry metadata vector the model consumes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .encoder import Vocabulary, normalize_text, pad_or_truncate, tokenize

logger = logging.getLogger(__name__)

LABELS = ("negative", "positive")
COUNT_FIELDS = ("followers", "likes", "replies", "retweets")
MAX_BAD_FRACTION = 0.10
NEGATION_WINDOW = 3
SUBJECTIVITY_MIN = 0.3
SENTIMENT_DEAD_ZONE = 0.1
_CLAUSE_BREAK = re.compile(r"[.!?;,\n،؛؟]")


class CorpusError(ValueError):
    """Raised when a corpus file cannot be used at all."""


# ---------------------------------------------------------------------------
# records and I/O
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TweetRecord:
    id: str
    text: str
    followers: int = 0
    likes: int = 0
    replies: int = 0
    retweets: int = 0
    sentiment: Optional[int] = None
    polarity: Optional[float] = None
    subjectivity: Optional[float] = None
    label: Optional[str] = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def with_label(self, label: str) -> "TweetRecord":
        d = asdict(self)
        d["label"] = label
        return TweetRecord(**d)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def parse_record(obj) -> TweetRecord:
    """Validate one decoded JSON object; raises ValueError on schema violations."""
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    if not isinstance(obj.get("id"), str):
        raise ValueError("'id' must be a string")
    text = obj.get("text")
    if not isinstance(text, str) or not text.strip():
        raise ValueError("'text' must be a non-empty string")
    counts = {}
    for name in COUNT_FIELDS:
        value = obj.get(name)
        if not _is_int(value) or value < 0:
            raise ValueError(f"'{name}' must be a non-negative integer")
        counts[name] = value
    sentiment = obj.get("sentiment")
    if sentiment is not None and (not _is_num(sentiment) or sentiment not in (-1, 0, 1)):
        raise ValueError("'sentiment' must be -1, 0 or 1")
    polarity = obj.get("polarity")
    if polarity is not None and (not _is_num(polarity) or not -1.0 <= polarity <= 1.0):
        raise ValueError("'polarity' must be in [-1, 1]")
    subjectivity = obj.get("subjectivity")
    if subjectivity is not None and (not _is_num(subjectivity) or not 0.0 <= subjectivity <= 1.0):
        raise ValueError("'subjectivity' must be in [0, 1]")
    label = obj.get("label")
    if label is not None and label not in LABELS:
        raise ValueError("'label' must be 'positive' or 'negative'")
    return TweetRecord(
        id=obj["id"],
        text=text,
        sentiment=None if sentiment is None else int(sentiment),
        polarity=None if polarity is None else float(polarity),
        subjectivity=None if subjectivity is None else float(subjectivity),
        label=label,
        **counts,
    )


def load_corpus(path: str | Path, errors: Optional[list] = None) -> list[TweetRecord]:
    """Read a JSON Lines corpus.

    Bad lines are skipped and appended to ``errors`` as ``(line_number, message)``.
    More than 10% bad lines raises CorpusError. Unreadable files raise OSError.
    """
    records: list[TweetRecord] = []
    bad: list[tuple[int, str]] = []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                records.append(parse_record(json.loads(line)))
            except (ValueError, json.JSONDecodeError) as exc:
                bad.append((lineno, str(exc)))
                logger.warning("%s:%d: %s", path, lineno, exc)
    if errors is not None:
        errors.extend(bad)
    if total and len(bad) / total > MAX_BAD_FRACTION:
        raise CorpusError(f"{path}: {len(bad)} of {total} lines are invalid (limit 10%)")
    return records


def write_corpus(records: Iterable[TweetRecord], path: str | Path, extra: Optional[Sequence[dict]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, rec in enumerate(records):
            obj = rec.to_json()
            if extra is not None:
                obj.update(extra[i])
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# lexicons
# ---------------------------------------------------------------------------


def read_entries(text: str) -> list[str]:
    """Non-empty, non-comment lines of a lexicon file."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


def _resource(name: str) -> str:
    return resources.files("capsfusion.resources").joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class KeywordList:
    phrases: tuple[str, ...]
    kind: str = "collection"

    def __post_init__(self):
        if self.kind not in ("collection", "stop"):
            raise ValueError(f"unknown keyword list kind {self.kind!r}")
        seen, unique = set(), []
        for p in self.phrases:
            key = normalize_text(p)
            if key and key not in seen:
                seen.add(key)
                unique.append(p)
        if not unique:
            raise ValueError("keyword list is empty")
        object.__setattr__(self, "phrases", tuple(unique))
        object.__setattr__(self, "_normalized", tuple(normalize_text(p) for p in unique))

    @classmethod
    def load(cls, path: str | Path, kind: str = "collection") -> "KeywordList":
        return cls(tuple(read_entries(Path(path).read_text(encoding="utf-8"))), kind)

    @classmethod
    def default(cls, kind: str = "collection") -> "KeywordList":
        name = "keywords.txt" if kind == "collection" else "stop.txt"
        return cls(tuple(read_entries(_resource(name))), kind)

    @property
    def normalized(self) -> tuple[str, ...]:
        return self._normalized  # type: ignore[attr-defined]


@dataclass
class Lexicons:
    """Word lists used by the annotator and the fallback sentiment scorer."""

    negation: frozenset[str]
    first_person: frozenset[str]
    third_person: frozenset[str]
    sentiment: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def default(cls) -> "Lexicons":
        return cls(
            negation=_word_set(_resource("negation.txt")),
            first_person=_word_set(_resource("first_person.txt")),
            third_person=_word_set(_resource("third_person.txt")),
            sentiment=parse_sentiment_lexicon(_resource("sentiment.tsv")),
        )


def _word_set(text: str) -> frozenset[str]:
    return frozenset(normalize_text(w) for w in read_entries(text))


def parse_sentiment_lexicon(text: str) -> dict[str, tuple[float, float]]:
    """``word<TAB>polarity<TAB>subjectivity`` lines -> {word: (polarity, subjectivity)}."""
    table = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"sentiment lexicon line {lineno}: expected 3 tab-separated fields")
        table[normalize_text(parts[0])] = (float(parts[1]), float(parts[2]))
    return table


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


def keyword_match(text: str, keywords: KeywordList) -> bool:
    norm = normalize_text(text)
    return any(p in norm for p in keywords.normalized)


def keyword_positions(text: str, keywords: KeywordList) -> list[int]:
    """Start offsets (in the normalized text) of every keyword occurrence."""
    norm = normalize_text(text)
    hits = []
    for phrase in keywords.normalized:
        start = norm.find(phrase)
        while start != -1:
            hits.append(start)
            start = norm.find(phrase, start + 1)
    return sorted(set(hits))


def stop_filter(records: Sequence[TweetRecord], stop: KeywordList) -> tuple[list[TweetRecord], list[TweetRecord]]:
    kept, removed = [], []
    for rec in records:
        (removed if keyword_match(rec.text, stop) else kept).append(rec)
    return kept, removed


@dataclass
class FilterReport:
    rows: list[tuple[str, int, int]] = field(default_factory=list)

    def add(self, stage: str, kept: int, removed: int) -> None:
        self.rows.append((stage, kept, removed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "kept", "removed"])
        writer.writerows(self.rows)
        return buf.getvalue()


def filter_corpus(
    records: Sequence[TweetRecord], keywords: KeywordList, stop: KeywordList
) -> tuple[list[TweetRecord], FilterReport]:
    """Keyword relevance then stop-keyword removal, with per-stage counts."""
    report = FilterReport()
    relevant = [r for r in records if keyword_match(r.text, keywords)]
    report.add("keyword", len(relevant), len(records) - len(relevant))
    kept, removed = stop_filter(relevant, stop)
    report.add("stop", len(kept), len(removed))
    return kept, report


# ---------------------------------------------------------------------------
# sentiment and annotation
# ---------------------------------------------------------------------------


def lexicon_sentiment(text: str, lexicon: dict[str, tuple[float, float]]) -> tuple[int, float, float]:
    """(Se, polarity, subjectivity) from mean lexicon weights of the matched tokens."""
    hits = [lexicon[t] for t in tokenize(text) if t in lexicon]
    if not hits:
        return 0, 0.0, 0.0
    pol = float(np.clip(np.mean([h[0] for h in hits]), -1.0, 1.0))
    subj = float(np.clip(np.mean([h[1] for h in hits]), 0.0, 1.0))
    se = 0 if abs(pol) < SENTIMENT_DEAD_ZONE else (1 if pol > 0 else -1)
    return se, pol, subj


def sentiment_of(record: TweetRecord, lexicon: dict[str, tuple[float, float]]) -> tuple[int, float, float]:
    """Precomputed fields where present, lexicon scores for the missing ones."""
    if record.sentiment is not None and record.polarity is not None and record.subjectivity is not None:
        return record.sentiment, record.polarity, record.subjectivity
    se, pol, subj = lexicon_sentiment(record.text, lexicon)
    return (
        se if record.sentiment is None else record.sentiment,
        pol if record.polarity is None else record.polarity,
        subj if record.subjectivity is None else record.subjectivity,
    )


def _mention_is_personal(prefix: str, lex: Lexicons, window: int) -> bool:
    breaks = [m.end() for m in _CLAUSE_BREAK.finditer(prefix)]
    clause = tokenize(prefix[breaks[-1]:] if breaks else prefix)
    if any(tok in lex.negation for tok in clause[-window:]):
        return False
    for tok in reversed(clause):
        if tok in lex.first_person:
            return True
        if tok in lex.third_person:
            return False
    return True


def annotate(
    record: TweetRecord,
    keywords: Optional[KeywordList] = None,
    lexicons: Optional[Lexicons] = None,
    window: int = NEGATION_WINDOW,
    subjectivity_min: float = SUBJECTIVITY_MIN,
) -> str:
    """Label a filtered record 'positive' or 'negative'.

    Negative when no keyword is present, when every keyword mention is negated
    (a cue among the ``window`` tokens before it in its clause) or governed by
    a third-person subject (nearest person word before it in the clause), or
    when subjectivity is below ``subjectivity_min``. Positive only when some
    mention survives and the sentiment is negative; otherwise negative.
    """
    keywords = keywords or _default_keywords()
    lexicons = lexicons or _default_lexicons()
    norm = normalize_text(record.text)
    positions = keyword_positions(norm, keywords)
    if not positions:
        return "negative"
    if not any(_mention_is_personal(norm[:pos], lexicons, window) for pos in positions):
        return "negative"
    se, _, subj = sentiment_of(record, lexicons.sentiment)
    if subj < subjectivity_min:
        return "negative"
    return "positive" if se == -1 else "negative"


_DEFAULTS: dict[str, object] = {}


def _default_keywords() -> KeywordList:
    if "keywords" not in _DEFAULTS:
        _DEFAULTS["keywords"] = KeywordList.default("collection")
    return _DEFAULTS["keywords"]  # type: ignore[return-value]


def _default_lexicons() -> Lexicons:
    if "lexicons" not in _DEFAULTS:
        _DEFAULTS["lexicons"] = Lexicons.default()
    return _DEFAULTS["lexicons"]  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


@dataclass
class FeatureStats:
    """Mean / std of log1p(count) for followers, likes, replies, retweets."""

    mean: tuple[float, float, float, float]
    std: tuple[float, float, float, float]

    @classmethod
    def fit(cls, records: Sequence[TweetRecord]) -> "FeatureStats":
        if not records:
            return cls((0.0,) * 4, (1.0,) * 4)
        logs = np.log1p(np.array([[getattr(r, f) for f in COUNT_FIELDS] for r in records], dtype=np.float64))
        std = logs.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(x) for x in logs.mean(axis=0)), tuple(float(x) for x in std))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(tuple(d["mean"]), tuple(d["std"]))


def raw_features(record: TweetRecord, lexicon: dict[str, tuple[float, float]]) -> np.ndarray:
    """[Se, polarity, subjectivity, log1p counts...] before standardization."""
    se, pol, subj = sentiment_of(record, lexicon)
    counts = np.log1p(np.array([getattr(record, f) for f in COUNT_FIELDS], dtype=np.float64))
    return np.concatenate([[se, pol, subj], counts])


def featurize(
    record: TweetRecord, stats: Optional[FeatureStats], lexicon: Optional[dict[str, tuple[float, float]]] = None
) -> np.ndarray:
    if stats is None:
        raise ValueError("featurize needs fitted FeatureStats")
    lexicon = _default_lexicons().sentiment if lexicon is None else lexicon
    f = raw_features(record, lexicon)
    f[3:] = (f[3:] - np.asarray(stats.mean)) / np.asarray(stats.std)
    return f


# ---------------------------------------------------------------------------
# examples and splitting
# ---------------------------------------------------------------------------


@dataclass
class AnnotatedExample:
    token_ids: list[int]
    features: np.ndarray
    label: int


def make_examples(
    records: Sequence[TweetRecord],
    vocab: Vocabulary,
    stats: FeatureStats,
    n: int,
    lexicon: Optional[dict[str, tuple[float, float]]] = None,
) -> list[AnnotatedExample]:
    out = []
    for rec in records:
        if rec.label is None:
            raise ValueError(f"record {rec.id!r} has no label; annotate it first")
        ids = pad_or_truncate(vocab.encode(rec.text), n)
        out.append(AnnotatedExample(ids, featurize(rec, stats, lexicon), LABELS.index(rec.label)))
    return out


def as_arrays(examples: Sequence[AnnotatedExample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(ids (N, n), features (N, 7), labels (N,))."""
    if not examples:
        return np.zeros((0, 0), np.int64), np.zeros((0, 7)), np.zeros(0, np.int64)
    ids = np.array([e.token_ids for e in examples], dtype=np.int64)
    feats = np.stack([e.features for e in examples]).astype(np.float64)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return ids, feats, labels


def _label_of(item) -> object:
    return item.label


def split(items: Sequence, ratio: float = 0.8, seed: int = 42, label: Callable = _label_of) -> tuple[list, list]:
    """Seeded, label-stratified train/test partition.

    Each class contributes round(ratio * count) items to train (at least one
    to each side); both sides are returned in a seeded shuffled order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    by_class: dict = {}
    for idx, item in enumerate(items):
        by_class.setdefault(label(item), []).append(idx)
    train_idx, test_idx = [], []
    for key in sorted(by_class, key=str):
        idx = by_class[key]
        if len(idx) < 2:
            raise ValueError(f"class {key!r} has fewer than 2 examples")
        perm = [idx[i] for i in rng.permutation(len(idx))]
        k = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train_idx += perm[:k]
        test_idx += perm[k:]
    train_idx = [train_idx[i] for i in rng.permutation(len(train_idx))]
    test_idx = [test_idx[i] for i in rng.permutation(len(test_idx))]
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Shape of a generated corpus.

    ``signal`` says where the label lives: "text" plants class marker tokens,
    "features" draws class-conditional sentiment and counts over class-blind
    text, "both" does both.
    """

    n_records: int = 1000
    vocab_size: int = 200
    signal: str = "text"
    plant_rate: float = 1.0
    n_markers: int = 5
    min_len: int = 6
    max_len: int = 20
    positive_fraction: float = 0.5

    def validate(self) -> None:
        if self.signal not in ("text", "features", "both"):
            raise ValueError(f"signal must be text, features or both, got {self.signal!r}")
        if self.n_records < 4 or self.vocab_size < 1 or self.n_markers < 1:
            raise ValueError("degenerate synthetic corpus spec")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.plant_rate <= 1.0 or not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("plant_rate must be in [0, 1] and positive_fraction in (0, 1)")


def marker_tokens(spec: SynthSpec) -> tuple[list[str], list[str]]:
    return [f"posmark{i}" for i in range(spec.n_markers)], [f"negmark{i}" for i in range(spec.n_markers)]


def synth_corpus(spec: SynthSpec, seed: int = 7) -> list[TweetRecord]:
    """Deterministic labelled corpus for a given spec and seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    n_pos = int(round(spec.n_records * spec.positive_fraction))
    labels = np.array([1] * n_pos + [0] * (spec.n_records - n_pos))[rng.permutation(spec.n_records)]
    filler = [f"w{i:04d}" for i in range(spec.vocab_size)]
    pos_marks, neg_marks = marker_tokens(spec)
    text_signal = spec.signal in ("text", "both")
    feature_signal = spec.signal in ("features", "both")

    records = []
    for i, y in enumerate(labels):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        words = [filler[j] for j in rng.integers(0, spec.vocab_size, size=length)]
        if text_signal and rng.random() < spec.plant_rate:
            marks = pos_marks if y == 1 else neg_marks
            words.insert(int(rng.integers(0, length + 1)), marks[int(rng.integers(0, len(marks)))])
        if feature_signal:
            meta = _class_features(rng, int(y))
        else:
            meta = _neutral_features(rng)
        records.append(TweetRecord(id=f"s{i:05d}", text=" ".join(words), label=LABELS[int(y)], **meta))
    return records


def _neutral_features(rng: np.random.Generator) -> dict:
    return {
        "sentiment": int(rng.integers(-1, 2)),
        "polarity": float(np.round(rng.uniform(-1.0, 1.0), 4)),
        "subjectivity": float(np.round(rng.uniform(0.0, 1.0), 4)),
        "followers": int(rng.lognormal(5.0, 1.5)),
        "likes": int(rng.lognormal(1.5, 1.2)),
        "replies": int(rng.lognormal(0.5, 1.0)),
        "retweets": int(rng.lognormal(0.8, 1.0)),
    }


def _class_features(rng: np.random.Generator, y: int) -> dict:
    # positives: negative affect, personal tone, small audience; negatives the reverse
    sign = -1.0 if y == 1 else 1.0
    pol = float(np.clip(rng.normal(0.45 * sign, 0.3), -1.0, 1.0))
    se = 0 if abs(pol) < SENTIMENT_DEAD_ZONE else (1 if pol > 0 else -1)
    return {
        "sentiment": se,
        "polarity": float(np.round(pol, 4)),
        "subjectivity": float(np.round(np.clip(rng.normal(0.7 if y else 0.4, 0.15), 0.0, 1.0), 4)),
        "followers": int(rng.lognormal(4.0 if y else 6.0, 1.0)),
        "likes": int(rng.lognormal(1.0 if y else 2.0, 1.0)),
        "replies": int(rng.lognormal(1.2 if y else 0.5, 0.8)),
        "retweets": int(rng.lognormal(0.3 if y else 1.3, 0.8)),
    }
