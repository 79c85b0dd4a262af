"""Specialist-evaluation materials: anonymised image-pair manifests, hidden
answer keys, and scoring of returned response sheets.

Two tasks are supported. ``REAL_VS_FAKE`` shows a real and a generated image
of the same domain side by side and asks which one is the original.
``TISSUE_CLASSIFY`` shows two images of the same region and asks for the
tissue class; half of the pairs are fully real, half contain a translated
image.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .dataio import CLASSES, DomainTag, TissueClass
from .evaluate import classification_report


class SurveyTask(str, Enum):
    REAL_VS_FAKE = "REAL_VS_FAKE"
    TISSUE_CLASSIFY = "TISSUE_CLASSIFY"


class Group(str, Enum):
    ES = "ES"  # expert surgeons
    RE = "RE"  # residents


class PairType(str, Enum):
    REAL_NBI_NBI = "real_nbi_nbi"
    REAL_WLI_WLI = "real_wli_wli"
    REAL_NBI_WLI = "real_nbi_wli"
    TRANSLATED = "translated"

    @property
    def option(self) -> int:
        return 2 if self is PairType.TRANSLATED else 1


REAL_PAIR_TYPES = (PairType.REAL_NBI_NBI, PairType.REAL_WLI_WLI, PairType.REAL_NBI_WLI)

REALFAKE_PER_DOMAIN = 10
CLASSIFY_ITEMS = 40
SIDES = ("left", "right")
# generated image shown in domain d was translated from the other domain
DIRECTION = {DomainTag.WLI: "NBI->WLI", DomainTag.NBI: "WLI->NBI"}


class SurveyError(ValueError):
    pass


@dataclass
class SurveyItem:
    item_id: str
    left_token: str
    right_token: str
    truth: str  # "left"/"right" for task 1, "<pair_type>,<class>" for task 2
    order_seed: int
    domain: DomainTag | None = None
    pair_type: PairType | None = None
    tissue: TissueClass | None = None


@dataclass
class SurveyManifest:
    task_id: SurveyTask
    items: list[SurveyItem]
    assets: dict[str, str] = field(default_factory=dict)  # token -> image path
    key_path: Path | None = None

    def __len__(self) -> int:
        return len(self.items)

    @property
    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.items]

    def key(self) -> dict[str, str]:
        return {it.item_id: it.truth for it in self.items}

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write ``manifest.csv`` (public), ``key.csv`` and ``key_assets.json`` (hidden)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"manifest": out / "manifest.csv", "key": out / "key.csv", "assets": out / "key_assets.json"}
        with paths["manifest"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item_id", "task", "left_token", "right_token"])
            for it in self.items:
                w.writerow([it.item_id, self.task_id.value, it.left_token, it.right_token])
        with paths["key"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item_id", "truth"])
            for it in self.items:
                w.writerow([it.item_id, it.truth])
        items_meta = {
            it.item_id: {
                "order_seed": it.order_seed,
                "domain": it.domain.value if it.domain else None,
                "pair_type": it.pair_type.value if it.pair_type else None,
                "tissue": it.tissue.value if it.tissue else None,
            }
            for it in self.items
        }
        doc = {"task": self.task_id.value, "tokens": self.assets, "items": items_meta}
        paths["assets"].write_text(json.dumps(doc, indent=2))
        self.key_path = paths["key"]
        return paths


def load_survey(out_dir: str | Path) -> SurveyManifest:
    """Rebuild a manifest (with its key) from the three files written by :meth:`SurveyManifest.write`."""
    out = Path(out_dir)
    doc = json.loads((out / "key_assets.json").read_text())
    key = load_key(out / "key.csv")
    items = []
    with (out / "manifest.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            meta = doc["items"][row["item_id"]]
            items.append(
                SurveyItem(
                    row["item_id"],
                    row["left_token"],
                    row["right_token"],
                    key[row["item_id"]],
                    int(meta["order_seed"]),
                    DomainTag(meta["domain"]) if meta["domain"] else None,
                    PairType(meta["pair_type"]) if meta["pair_type"] else None,
                    TissueClass(meta["tissue"]) if meta["tissue"] else None,
                )
            )
    return SurveyManifest(SurveyTask(doc["task"]), items, dict(doc["tokens"]), out / "key.csv")


def load_key(path: str | Path) -> dict[str, str]:
    with Path(path).open(newline="") as fh:
        return {row["item_id"]: row["truth"] for row in csv.DictReader(fh)}


class _Tokens:
    """Anonymous, collision-free image tokens drawn from the manifest rng."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.assets: dict[str, str] = {}

    def __call__(self, path: str) -> str:
        while True:
            tok = f"img_{int(self.rng.integers(0, 2**40)):010x}"
            if tok not in self.assets:
                self.assets[tok] = str(path)
                return tok


def _numbered(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1:02d}" for i in range(n)]


# --------------------------------------------------------------------------- task 1


def gen_realfake_task(
    real_pool: Mapping[DomainTag, Sequence[str]],
    generated_pool: Mapping[DomainTag, Sequence[str]],
    seed: int = 0,
    per_domain: int = REALFAKE_PER_DOMAIN,
) -> SurveyManifest:
    """Same-domain (real, generated) pairs, ``per_domain`` per domain, sides and order randomised."""
    rng = np.random.default_rng(seed)
    drafts = []
    for dom in DomainTag:
        real = list(real_pool.get(dom, ()))
        fake = list(generated_pool.get(dom, ()))
        if len(real) < per_domain or len(fake) < per_domain:
            raise SurveyError(f"{dom.value}: need {per_domain} real and {per_domain} generated images, have {len(real)}/{len(fake)}")
        r_idx = rng.choice(len(real), per_domain, replace=False)
        f_idx = rng.choice(len(fake), per_domain, replace=False)
        for ri, fi in zip(r_idx, f_idx):
            drafts.append((dom, real[ri], fake[fi]))
    tokens = _Tokens(rng)
    items = []
    order = rng.permutation(len(drafts))
    for item_id, k in zip(_numbered("rf", len(drafts)), order):
        dom, real, fake = drafts[k]
        order_seed = int(rng.integers(0, 2**31))
        real_left = bool(np.random.default_rng(order_seed).random() < 0.5)
        left, right = (real, fake) if real_left else (fake, real)
        items.append(SurveyItem(item_id, tokens(left), tokens(right), "left" if real_left else "right", order_seed, domain=dom))
    return SurveyManifest(SurveyTask.REAL_VS_FAKE, items, tokens.assets)


# --------------------------------------------------------------------------- task 2


@dataclass(frozen=True)
class PairCandidate:
    """One pair of same-region images declared by the experimenter."""

    left_path: str
    right_path: str
    pair_type: PairType
    tissue: TissueClass

    def __post_init__(self):
        object.__setattr__(self, "pair_type", PairType(self.pair_type))
        object.__setattr__(self, "tissue", TissueClass(self.tissue))


def load_pair_candidates(path: str | Path) -> list[PairCandidate]:
    """Read a pairing CSV ``left_path,right_path,pair_type,tissue_class``."""
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"left_path", "right_path", "pair_type", "tissue_class"}
        if not need <= set(reader.fieldnames or ()):
            raise SurveyError(f"pairing CSV must have columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(PairCandidate(row["left_path"], row["right_path"], PairType(row["pair_type"]), TissueClass(row["tissue_class"])))
            except ValueError as exc:
                raise SurveyError(f"{path}:{lineno}: {exc}") from None
    return out


def _subtype_quotas(n_real: int, rng: np.random.Generator) -> list[dict[PairType, int]]:
    """Even splits of the real-pair items over the three sub-types, in random order of who gets the extra."""
    base, extra = divmod(n_real, len(REAL_PAIR_TYPES))
    orders = [REAL_PAIR_TYPES[i:] + REAL_PAIR_TYPES[:i] for i in range(len(REAL_PAIR_TYPES))]
    rng.shuffle(orders)
    return [{t: base + (1 if j < extra else 0) for j, t in enumerate(o)} for o in orders]


def _allocate(quota: Mapping[PairType, int], per_class: int, available: Mapping[tuple[PairType, TissueClass], int]) -> dict | None:
    """Pair-type x class counts meeting both marginals, via max flow; None if infeasible."""
    g = nx.DiGraph()
    for t, q in quota.items():
        g.add_edge("src", t, capacity=q)
        for c in CLASSES:
            cap = available.get((t, c), 0)
            if cap:
                g.add_edge(t, c, capacity=cap)
    for c in CLASSES:
        g.add_edge(c, "sink", capacity=per_class)
    value, flow = nx.maximum_flow(g, "src", "sink")
    if value != sum(quota.values()):
        return None
    return {(t, c): flow[t].get(c, 0) for t in quota for c in CLASSES}


def gen_classification_task(candidates: Sequence[PairCandidate], seed: int = 0, n_items: int = CLASSIFY_ITEMS) -> SurveyManifest:
    """Pairs split 50/50 into real pairs (three even sub-types) and translated pairs, classes balanced."""
    if n_items % (2 * len(CLASSES)):
        raise SurveyError(f"n_items must be a multiple of {2 * len(CLASSES)}")
    rng = np.random.default_rng(seed)
    by_cell: dict[tuple[PairType, TissueClass], list[PairCandidate]] = defaultdict(list)
    for c in candidates:
        if c.tissue is TissueClass.UNLABELED:
            raise SurveyError("pair candidates need a tissue class")
        by_cell[(c.pair_type, c.tissue)].append(c)
    available = {k: len(v) for k, v in by_cell.items()}
    half, per_class = n_items // 2, n_items // len(CLASSES)
    for t in PairType:
        have = sum(available.get((t, c), 0) for c in CLASSES)
        if have == 0:
            raise SurveyError(f"no candidate pairs of type {t.value}")
    alloc = None
    for quota in _subtype_quotas(half, rng):
        quota = {**quota, PairType.TRANSLATED: half}
        alloc = _allocate(quota, per_class, available)
        if alloc is not None:
            break
    if alloc is None:
        counts = {f"{t.value}/{c.value}": n for (t, c), n in sorted(available.items())}
        raise SurveyError(f"insufficient pairs for a balanced {n_items}-item task; available: {counts}")
    chosen: list[PairCandidate] = []
    for (t, c), n in alloc.items():
        if n:
            pool = by_cell[(t, c)]
            chosen += [pool[i] for i in rng.choice(len(pool), n, replace=False)]
    tokens = _Tokens(rng)
    items = []
    for item_id, k in zip(_numbered("tc", len(chosen)), rng.permutation(len(chosen))):
        cand = chosen[k]
        order_seed = int(rng.integers(0, 2**31))
        swap = bool(np.random.default_rng(order_seed).random() < 0.5)
        left, right = (cand.right_path, cand.left_path) if swap else (cand.left_path, cand.right_path)
        truth = f"{cand.pair_type.value},{cand.tissue.value}"
        items.append(SurveyItem(item_id, tokens(left), tokens(right), truth, order_seed, pair_type=cand.pair_type, tissue=cand.tissue))
    return SurveyManifest(SurveyTask.TISSUE_CLASSIFY, items, tokens.assets)


# --------------------------------------------------------------------------- responses


@dataclass
class ResponseSheet:
    respondent_id: str
    group: Group
    answers: dict[str, str]

    def __post_init__(self):
        self.group = Group(self.group)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item_id", "answer"])
            w.writerows(self.answers.items())
        return path


def load_response_sheet(path: str | Path, respondent_id: str | None = None, group: Group | str | None = None) -> ResponseSheet:
    """Read a response CSV ``item_id,answer``.

    Without explicit ``respondent_id``/``group`` the file stem is parsed as
    ``<GROUP>_<respondent>`` (e.g. ``ES_04.csv``).
    """
    path = Path(path)
    if group is None or respondent_id is None:
        prefix, _, rest = path.stem.partition("_")
        if prefix not in Group.__members__ or not rest:
            raise SurveyError(f"{path.name}: name the file <ES|RE>_<id>.csv or pass the group explicitly")
        group = group or prefix
        respondent_id = respondent_id or rest
    answers = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"item_id", "answer"} <= set(reader.fieldnames):
            raise SurveyError(f"{path}: response CSV must have columns item_id,answer")
        for row in reader:
            if row["item_id"] in answers:
                raise SurveyError(f"{path}: duplicate answer for {row['item_id']}")
            answers[row["item_id"]] = row["answer"].strip()
    return ResponseSheet(respondent_id, Group(group), answers)


def key_as_sheet(manifest: SurveyManifest, respondent_id: str = "oracle", group: Group = Group.ES) -> ResponseSheet:
    """The sheet a respondent who knows the key would return."""
    if manifest.task_id is SurveyTask.REAL_VS_FAKE:
        answers = {it.item_id: it.truth for it in manifest.items}
    else:
        answers = {it.item_id: it.truth.split(",")[1] for it in manifest.items}
    return ResponseSheet(respondent_id, group, answers)


def random_sheet(manifest: SurveyManifest, rng: np.random.Generator, respondent_id: str = "random", group: Group = Group.RE) -> ResponseSheet:
    """Uniform random answers from the task vocabulary."""
    vocab = SIDES if manifest.task_id is SurveyTask.REAL_VS_FAKE else tuple(c.value for c in CLASSES)
    return ResponseSheet(respondent_id, group, {it.item_id: vocab[int(rng.integers(len(vocab)))] for it in manifest.items})


# --------------------------------------------------------------------------- scoring


def binary_scores(truth_real_left: Sequence[bool], said_left: Sequence[bool]) -> dict[str, float]:
    """Accuracy, precision, recall and two-point AUC with "real on the left" as positive.

    AUC is the area under the single-threshold ROC, ``(1 + TPR - FPR) / 2``.
    When one class is absent the rates are undefined and AUC falls back to accuracy.
    """
    t = np.asarray(truth_real_left, dtype=bool)
    p = np.asarray(said_left, dtype=bool)
    if t.size == 0:
        raise SurveyError("no answered items to score")
    tp = int((t & p).sum())
    fp = int((~t & p).sum())
    fn = int((t & ~p).sum())
    tn = int((~t & ~p).sum())
    acc = (tp + tn) / t.size
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp + fn and fp + tn:
        auc = (1.0 + recall - fp / (fp + tn)) / 2.0
    else:
        auc = acc
    return {"accuracy": acc, "precision": precision, "recall": recall, "auc": auc, "n": int(t.size)}


def _mean_std(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0, "n": int(v.size)}


@dataclass
class SurveyReport:
    task_id: SurveyTask
    per_respondent: dict[str, dict]  # respondent -> stratum -> metric -> value
    groups: dict[str, dict]  # group (ES, RE, ALL) -> stratum -> metric -> {mean, std, n}
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"task": self.task_id.value, "per_respondent": self.per_respondent, "groups": self.groups, "warnings": self.warnings}

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def _validate(manifest: SurveyManifest, sheet: ResponseSheet, notes: list[str]) -> list[SurveyItem]:
    ids = set(manifest.item_ids)
    unknown = sorted(set(sheet.answers) - ids)
    if unknown:
        raise SurveyError(f"sheet {sheet.respondent_id}: unknown item ids {unknown}")
    vocab = set(SIDES) if manifest.task_id is SurveyTask.REAL_VS_FAKE else {c.value for c in CLASSES}
    bad = {k: v for k, v in sheet.answers.items() if v not in vocab}
    if bad:
        raise SurveyError(f"sheet {sheet.respondent_id}: answers outside {sorted(vocab)}: {bad}")
    answered = [it for it in manifest.items if it.item_id in sheet.answers]
    if len(answered) < len(manifest.items):
        msg = f"sheet {sheet.respondent_id}: {len(manifest.items) - len(answered)} unanswered items; scoring the answered subset"
        warnings.warn(msg, stacklevel=3)
        notes.append(msg)
    return answered


def _score_realfake(items: list[SurveyItem], key: Mapping[str, str], sheet: ResponseSheet) -> dict:
    strata = {"ALL": items}
    for dom, name in DIRECTION.items():
        strata[name] = [it for it in items if it.domain is dom]
    out = {}
    for name, its in strata.items():
        if its:
            out[name] = binary_scores([key[it.item_id] == "left" for it in its], [sheet.answers[it.item_id] == "left" for it in its])
    return out


def _score_classify(items: list[SurveyItem], key: Mapping[str, str], sheet: ResponseSheet) -> dict:
    parsed = {it.item_id: key[it.item_id].split(",") for it in items}
    strata = {
        "ALL": items,
        "real_pair": [it for it in items if PairType(parsed[it.item_id][0]).option == 1],
        "translated_pair": [it for it in items if PairType(parsed[it.item_id][0]).option == 2],
    }
    out = {}
    for name, its in strata.items():
        if not its:
            continue
        truth = [TissueClass(parsed[it.item_id][1]) for it in its]
        preds = [TissueClass(sheet.answers[it.item_id]) for it in its]
        r = classification_report(preds, truth, stratum="ALL")
        out[name] = {"accuracy": r.accuracy, "precision": r.precision, "recall": r.recall, "f1": r.f1, "n": len(its)}
    return out


def score_responses(manifest: SurveyManifest, key: Mapping[str, str] | None, sheets: Sequence[ResponseSheet]) -> SurveyReport:
    """Per-respondent metrics and per-group mean +/- sample std.

    Task 1 strata are ALL and the two translation directions; task 2 strata
    split real-pair from translated-pair items.
    """
    key = dict(key) if key is not None else manifest.key()
    missing = set(manifest.item_ids) - set(key)
    if missing:
        raise SurveyError(f"answer key lacks items {sorted(missing)}")
    if not sheets:
        raise SurveyError("no response sheets")
    names = Counter(s.respondent_id for s in sheets)
    dup = [n for n, k in names.items() if k > 1]
    if dup:
        raise SurveyError(f"duplicate respondent ids {dup}")
    notes: list[str] = []
    scorer = _score_realfake if manifest.task_id is SurveyTask.REAL_VS_FAKE else _score_classify
    per = {}
    membership: dict[str, list[str]] = defaultdict(list)
    for sheet in sheets:
        items = _validate(manifest, sheet, notes)
        if not items:
            raise SurveyError(f"sheet {sheet.respondent_id} answers no items")
        per[sheet.respondent_id] = scorer(items, key, sheet)
        membership[sheet.group.value].append(sheet.respondent_id)
        membership["ALL"].append(sheet.respondent_id)
    groups = {}
    for g, members in membership.items():
        strata = {}
        for stratum in {s for m in members for s in per[m]}:
            rows = [per[m][stratum] for m in members if stratum in per[m]]
            strata[stratum] = {k: _mean_std([r[k] for r in rows]) for k in rows[0] if k != "n"}
        groups[g] = strata
    return SurveyReport(manifest.task_id, per, groups, notes)
