"""Synthetic paired-view dataset, report grammar, vocabulary, and splits.

Each case holds a latent vector of finding intensities in [0, 1].  Both views
render the same latent as Gaussian blobs at view-specific positions (plus
independent pixel noise), so the two views are semantically consistent by
construction.  The report is a deterministic template over the thresholded
latent, which makes n-gram metrics sensitive to whether a model recovered the
findings.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

FINDING_NAMES = [
    "opacity", "effusion", "nodule", "edema",
    "fibrosis", "scarring", "congestion", "atelectasis",
    "cardiomegaly", "pneumothorax", "granuloma", "infiltrate",
    "consolidation", "calcification", "hernia", "emphysema",
]
REGION_NAMES = [
    "apex", "base", "hilum", "margin",
    "periphery", "midzone", "costophrenic", "retrocardiac",
    "perihilar", "apical", "basilar", "lingula",
    "suprahilar", "subpleural", "paratracheal", "juxtacardiac",
]
NO_FINDING_SENTENCE = ["no", "acute", "findings", "."]
ACTIVE_THRESHOLD = 0.5
MAX_FINDINGS = len(FINDING_NAMES)

# Fixed view-specific blob placement: cell indices into the image's 4x4 layout
# grid.  The two orders differ so no finding occupies the same cell in both
# views.
_FRONTAL_CELLS = [0, 5, 10, 15, 3, 6, 9, 12, 1, 7, 8, 14, 2, 4, 11, 13]
_LATERAL_CELLS = [15, 2, 4, 9, 12, 1, 14, 3, 6, 11, 0, 13, 7, 10, 5, 8]
# Off-view findings are rendered faintly: even-indexed findings are strong in
# the frontal view, odd-indexed ones in the lateral view.
SECONDARY_GAIN = 0.35
BLOB_SIGMA = 2.5


class DataError(ValueError):
    """Bad dataset file or record (CLI exit code 3)."""


@dataclass
class Case:
    case_id: str
    latent: np.ndarray | None
    frontal: np.ndarray  # (1, H, W) float32 in [0, 1]
    lateral: np.ndarray  # (1, H, W) float32 in [0, 1]
    report: list[str]


@dataclass
class DatasetSplit:
    train: list[Case]
    val: list[Case]
    test: list[Case]
    split_seed: int


def _blob_positions(n_findings: int, image_size: int, view: str) -> list[tuple[float, float]]:
    cells = _FRONTAL_CELLS if view == "frontal" else _LATERAL_CELLS
    step = image_size / 4.0
    out = []
    for i in range(n_findings):
        cell = cells[i % 16]
        row, col = divmod(cell, 4)
        out.append(((row + 0.5) * step, (col + 0.5) * step))
    return out


def render_views(latent: np.ndarray, image_size: int = 32, noise_level: float = 0.0,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render the frontal and lateral images for one latent vector.

    With ``noise_level=0`` the output is a pure function of the latent.
    """
    n = len(latent)
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    views = []
    for view in ("frontal", "lateral"):
        img = np.zeros((image_size, image_size), dtype=np.float64)
        for i, (cy, cx) in enumerate(_blob_positions(n, image_size, view)):
            primary = (i % 2 == 0) if view == "frontal" else (i % 2 == 1)
            gain = 1.0 if primary else SECONDARY_GAIN
            img += gain * latent[i] * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * BLOB_SIGMA**2))
        if noise_level > 0:
            if rng is None:
                raise ValueError("noise_level > 0 requires an rng")
            img = img + rng.normal(0.0, noise_level, size=img.shape)
        views.append(np.clip(img, 0.0, 1.0)[None].astype(np.float32))
    return views[0], views[1]


def report_from_latent(latent: np.ndarray) -> list[str]:
    """One sentence per active finding; a fixed sentence when none is active."""
    tokens: list[str] = []
    for i, value in enumerate(latent):
        if value > ACTIVE_THRESHOLD:
            tokens += [FINDING_NAMES[i], "seen", "in", REGION_NAMES[i], "."]
    return tokens if tokens else list(NO_FINDING_SENTENCE)


def parse_report(tokens: list[str], n_findings: int) -> list[bool]:
    """Invert the report template: which findings does this report assert?

    Only inspects finding-name tokens, so it also works on model output that
    mangles the filler words.
    """
    present = set(tokens)
    return [FINDING_NAMES[i] in present for i in range(n_findings)]


def generate_synthetic_dataset(n_cases: int, n_findings: int = 4, noise_level: float = 0.35,
                               seed: int = 0, image_size: int = 32) -> list[Case]:
    if n_findings < 1:
        raise ValueError(f"n_findings must be >= 1, got {n_findings}")
    if n_findings > MAX_FINDINGS:
        raise ValueError(f"n_findings must be <= {MAX_FINDINGS}, got {n_findings}")
    if n_cases < 10:
        raise ValueError(f"n_cases must be >= 10, got {n_cases}")
    if noise_level < 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    rng = np.random.default_rng(seed)
    cases = []
    for idx in range(n_cases):
        latent = rng.uniform(0.0, 1.0, size=n_findings)
        frontal, lateral = render_views(latent, image_size, noise_level, rng)
        cases.append(Case(
            case_id=f"case{idx:05d}",
            latent=latent,
            frontal=frontal,
            lateral=lateral,
            report=report_from_latent(latent),
        ))
    return cases


class Vocabulary:
    """Token/id maps with UNK handling for rare tokens.

    Tokens whose corpus frequency is below ``min_freq`` are dropped and encode
    to the UNK id.  Kept tokens are ordered alphabetically so construction is
    deterministic.
    """

    def __init__(self, tokens: list[str]):
        specials = [PAD, BOS, EOS, UNK]
        self.id_to_token = specials + [t for t in tokens if t not in specials]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @classmethod
    def from_corpus(cls, reports: list[list[str]], min_freq: int = 5) -> "Vocabulary":
        if min_freq < 1:
            raise ValueError(f"min_freq must be >= 1, got {min_freq}")
        if not reports:
            raise DataError("cannot build a vocabulary from an empty corpus")
        counts = Counter(tok for report in reports for tok in report)
        kept = sorted(tok for tok, c in counts.items() if c >= min_freq)
        return cls(kept)

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int], strip_special: bool = True) -> list[str]:
        tokens = [self.id_to_token[i] for i in ids]
        if strip_special:
            tokens = [t for t in tokens if t not in (PAD, BOS, EOS)]
        return tokens


def build_vocabulary(reports: list[list[str]], min_freq: int = 5) -> Vocabulary:
    return Vocabulary.from_corpus(reports, min_freq)


def encode_report(report: list[str], vocab: Vocabulary, max_len: int) -> list[int]:
    """BOS + token ids + EOS, truncated so the total length is <= max_len.

    Truncation always keeps EOS as the final id so the termination symbol
    stays observable.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    ids = vocab.encode_tokens(report)[: max_len - 2]
    return [BOS_ID] + ids + [EOS_ID]


def split_dataset(cases: list[Case], seed: int) -> DatasetSplit:
    """Random 7:1:2 train/val/test partition, deterministic per seed."""
    if len(cases) < 10:
        raise DataError(f"need at least 10 cases to split, got {len(cases)}")
    order = np.random.default_rng(seed).permutation(len(cases))
    n = len(cases)
    n_train = round(0.7 * n)
    n_val = round(0.1 * n)
    idx = [cases[i] for i in order]
    return DatasetSplit(
        train=idx[:n_train],
        val=idx[n_train:n_train + n_val],
        test=idx[n_train + n_val:],
        split_seed=seed,
    )


# -- JSONL dataset format ---------------------------------------------------
# One case per line: {"id": str, "frontal": <view>, "lateral": <view>,
# "report": str}, where <view> is either an inline nested list (C x H x W) or
# a path to a .npy file relative to the JSONL file.


def save_jsonl(cases: list[Case], path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for case in cases:
            record = {
                "id": case.case_id,
                "frontal": case.frontal.tolist(),
                "lateral": case.lateral.tolist(),
                "report": " ".join(case.report),
            }
            fh.write(json.dumps(record) + "\n")


def _load_view(value, base_dir: Path, line_no: int, key: str) -> np.ndarray:
    if isinstance(value, str):
        view_path = base_dir / value
        if not view_path.exists():
            raise DataError(f"line {line_no}: {key} file not found: {view_path}")
        arr = np.load(view_path)
    elif isinstance(value, list):
        arr = np.asarray(value, dtype=np.float32)
    else:
        raise DataError(f"line {line_no}: {key} must be a path or a nested array")
    if arr.ndim != 3:
        raise DataError(f"line {line_no}: {key} must have shape (C, H, W), got {arr.shape}")
    return arr.astype(np.float32)


def load_external_dataset(path: str | Path) -> list[Case]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    cases = []
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: not valid JSON: {exc}") from exc
            for key in ("id", "frontal", "lateral", "report"):
                if key not in record:
                    raise DataError(f"line {line_no}: missing field {key!r}")
            cases.append(Case(
                case_id=str(record["id"]),
                latent=None,
                frontal=_load_view(record["frontal"], path.parent, line_no, "frontal"),
                lateral=_load_view(record["lateral"], path.parent, line_no, "lateral"),
                report=str(record["report"]).split(),
            ))
    return cases
