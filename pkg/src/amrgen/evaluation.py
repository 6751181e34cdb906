"""Metrics and analyses: corpus BLEU, smoothed sentence BLEU, bucketed
deltas against a sequential baseline, and contrastive-pair accuracy.

The bucketed analyses use the sentence-level metric (labeled sBLEU in
reports) because a per-example score is required; bucket edges default to
0 / 1-5 / 6-20 reentrancies and 0-10 / 11-50 / 51-250 dependency lengths.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

CATEGORIES = ("antecedent", "pronoun_type", "number", "gender")

REENTRANCY_BUCKETS = ((0, 0), (1, 5), (6, 20))
DEPENDENCY_BUCKETS = ((0, 10), (11, 50), (51, 250))


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus-level BLEU: geometric mean of clipped n-gram precisions up to
    4-grams with brevity penalty, as a percentage."""
    if len(hypotheses) != len(references):
        raise ValueError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += max(len(hyp) - n + 1, 0)
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if hyp_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision)


def sentence_metric(hypothesis, reference, max_n: int = 4) -> float:
    """Sentence-level smoothed BLEU: raw unigram precision, add-one
    smoothing on higher-order precisions, with brevity penalty."""
    hyp = list(hypothesis)
    ref = list(reference)
    if not ref:
        raise ValueError("empty reference")
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        total = max(len(hyp) - n + 1, 0)
        match = sum(
            min(count, _ngram_counts(ref, n)[gram])
            for gram, count in _ngram_counts(hyp, n).items()
        )
        if n == 1:
            if match == 0:
                return 0.0
            log_sum += math.log(match / total)
        else:
            log_sum += math.log((match + 1) / (total + 1))
    brevity = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return 100.0 * brevity * math.exp(log_sum / max_n)


# --------------------------------------------------------------------------
# Bucketed analysis


@dataclass(frozen=True)
class BucketRow:
    label: str
    count: int
    baseline_mean: float  # None when the bucket is empty
    deltas: tuple  # ((system, delta or None), ...)


def bucket_report(
    scores: dict,
    stats: list,
    bucketing: str = "reentrancies",
    edges=None,
    baseline: str = None,
) -> list:
    """Per-bucket mean score of the baseline system and deltas of the others.

    scores: system name -> per-example score list, all aligned with stats.
    stats: per-example dicts with reentrancies / max_dep_len keys.
    The dependency-length analysis excludes examples with reentrancies.
    """
    if bucketing not in ("reentrancies", "max_dep_len"):
        raise ValueError(f"unknown bucketing {bucketing!r}")
    if edges is None:
        edges = REENTRANCY_BUCKETS if bucketing == "reentrancies" else DEPENDENCY_BUCKETS
    systems = list(scores)
    if baseline is None:
        baseline = systems[0]
    lengths = {len(v) for v in scores.values()} | {len(stats)}
    if len(lengths) != 1:
        raise ValueError("per-system scores and stats must be aligned")

    indices = list(range(len(stats)))
    if bucketing == "max_dep_len":
        indices = [i for i in indices if stats[i]["reentrancies"] == 0]

    rows = []
    covered = set()
    for lo, hi in edges:
        members = [i for i in indices if lo <= stats[i][bucketing] <= hi]
        covered.update(members)
        label = str(lo) if lo == hi else f"{lo}-{hi}"
        rows.append(_bucket_row(label, members, scores, systems, baseline))
    overflow = [i for i in indices if i not in covered]
    if overflow:
        top = max(hi for _, hi in edges)
        rows.append(_bucket_row(f">{top}", overflow, scores, systems, baseline))
    return rows


def _bucket_row(label, members, scores, systems, baseline):
    if not members:
        return BucketRow(
            label=label,
            count=0,
            baseline_mean=None,
            deltas=tuple((s, None) for s in systems if s != baseline),
        )
    base = sum(scores[baseline][i] for i in members) / len(members)
    deltas = []
    for system in systems:
        if system == baseline:
            continue
        mean = sum(scores[system][i] for i in members) / len(members)
        deltas.append((system, mean - base))
    return BucketRow(label=label, count=len(members), baseline_mean=base, deltas=tuple(deltas))


def format_bucket_table(rows, bucketing: str, baseline: str) -> str:
    header = "reentrancies" if bucketing == "reentrancies" else "max dependency length"
    lines = [f"# sBLEU by {header} (deltas vs {baseline})"]
    systems = [s for s, _ in rows[0].deltas] if rows else []
    lines.append("\t".join(["bucket", "count", baseline] + systems))
    for row in rows:
        cells = [row.label, str(row.count)]
        cells.append("-" if row.baseline_mean is None else f"{row.baseline_mean:.2f}")
        for _, delta in row.deltas:
            cells.append("-" if delta is None else f"{delta:+.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Contrastive pairs


@dataclass(frozen=True)
class ContrastivePair:
    id: str
    reference: tuple
    contrastive: tuple
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if tuple(self.reference) == tuple(self.contrastive):
            raise ValueError("reference and contrastive sentence must differ")


@dataclass(frozen=True)
class CategoryResult:
    count: int
    wins: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.wins / self.count if self.count else 0.0


def contrastive_eval(score_fn, pairs, example_lookup):
    """Accuracy per category: a win needs the reference strictly more
    probable than the contrastive sentence; ties count as losses.

    score_fn(example, tokens) -> total log-probability.
    Returns (per-category CategoryResult, skipped count).
    """
    counts = {c: 0 for c in CATEGORIES}
    wins = {c: 0 for c in CATEGORIES}
    skipped = 0
    for pair in pairs:
        example = example_lookup(pair.id)
        if example is None:
            skipped += 1
            continue
        counts[pair.category] += 1
        if score_fn(example, pair.reference) > score_fn(example, pair.contrastive):
            wins[pair.category] += 1
    results = {c: CategoryResult(count=counts[c], wins=wins[c]) for c in CATEGORIES}
    return results, skipped


# --------------------------------------------------------------------------
# Mechanical contrastive-pair generation from pronoun annotations

# (person, number, gender) -> forms by case. Plural and non-third-person
# entries carry no gender.
_PRONOUNS = {
    ("3", "sing", "masc"): {"subj": "he", "obj": "him", "poss": "his", "refl": "himself"},
    ("3", "sing", "fem"): {"subj": "she", "obj": "her", "poss": "her", "refl": "herself"},
    ("3", "sing", "neut"): {"subj": "it", "obj": "it", "poss": "its", "refl": "itself"},
    ("3", "plur", None): {"subj": "they", "obj": "them", "poss": "their", "refl": "themselves"},
    ("1", "sing", None): {"subj": "i", "obj": "me", "poss": "my", "refl": "myself"},
    ("1", "plur", None): {"subj": "we", "obj": "us", "poss": "our", "refl": "ourselves"},
    ("2", "sing", None): {"subj": "you", "obj": "you", "poss": "your", "refl": "yourself"},
    ("2", "plur", None): {"subj": "you", "obj": "you", "poss": "your", "refl": "yourselves"},
}

_TYPE_SWAP = {"poss": "obj", "obj": "poss", "subj": "obj", "refl": "obj"}
_GENDER_SWAP = {"masc": "fem", "fem": "masc", "neut": "masc"}


@dataclass(frozen=True)
class PronounAnnotation:
    """One pronoun mention: token index, features, and its antecedent text."""

    id: str
    index: int
    person: str  # "1" | "2" | "3"
    number: str  # "sing" | "plur"
    gender: str  # "masc" | "fem" | "neut" | None
    case: str  # "subj" | "obj" | "poss" | "refl"
    antecedent: str = None


def _form(person, number, gender, case):
    key = (person, number, gender if person == "3" and number == "sing" else None)
    entry = _PRONOUNS.get(key)
    return entry[case] if entry else None


def make_contrastive_pairs(sentences: dict, annotations) -> list:
    """Apply the four replacement rules to each annotated pronoun mention.

    sentences: example id -> token list. Emits one pair per applicable rule;
    rules producing the original form are skipped.
    """
    pairs = []
    for ann in annotations:
        tokens = sentences.get(ann.id)
        if tokens is None:
            continue
        tokens = list(tokens)
        if not 0 <= ann.index < len(tokens):
            raise ValueError(
                f"annotation for {ann.id!r} references token {ann.index}, "
                f"sentence has {len(tokens)} tokens"
            )
        original = tokens[ann.index]

        def emit(category, replacement_tokens):
            contrastive = tokens[: ann.index] + replacement_tokens + tokens[ann.index + 1 :]
            if contrastive != tokens:
                pairs.append(
                    ContrastivePair(
                        id=ann.id,
                        reference=tuple(tokens),
                        contrastive=tuple(contrastive),
                        category=category,
                    )
                )

        if ann.antecedent:
            emit("antecedent", ann.antecedent.lower().split())
        swapped = _form(ann.person, ann.number, ann.gender, _TYPE_SWAP[ann.case])
        if swapped and swapped != original:
            emit("pronoun_type", [swapped])
        other_number = "plur" if ann.number == "sing" else "sing"
        # moving to singular third person needs a gender; default masculine
        gender = ann.gender or "masc"
        swapped = _form(ann.person, other_number, gender, ann.case)
        if swapped and swapped != original:
            emit("number", [swapped])
        if ann.person == "3" and ann.number == "sing" and ann.gender:
            swapped = _form(ann.person, ann.number, _GENDER_SWAP[ann.gender], ann.case)
            if swapped and swapped != original:
                emit("gender", [swapped])
    return pairs
