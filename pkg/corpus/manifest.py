"""Manifest-driven word corpora and their train/validation/test splits."""

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from core.exceptions import (
    DuplicateRow,
    EmptyManifest,
    ManifestError,
    MissingFile,
    MissingImage,
    WriterWithoutTest,
)
from core.logger import setup_logger
from classify.scoring import natural_key

logger = setup_logger("corpus")

MANIFEST_COLUMNS = ("writer_id", "page_id", "split", "word_path")
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class WordEntry:
    writer: str
    page: str
    split: str
    path: Path

    def sort_key(self) -> Tuple:
        return (natural_key(self.writer), natural_key(self.page), str(self.path))


@dataclass
class WordCorpus:
    """Word images of a writer roster, each assigned to one split."""
    entries: List[WordEntry] = field(default_factory=list)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=WordEntry.sort_key)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def writers(self) -> List[str]:
        return sorted({e.writer for e in self.entries}, key=natural_key)

    def split(self, name: str) -> List[WordEntry]:
        return [e for e in self.entries if e.split == name]

    def words_of(self, writer: str, split: str) -> List[WordEntry]:
        return [e for e in self.entries if e.writer == writer and e.split == split]

    def pages(self, split: str) -> Dict[Tuple[str, str], List[WordEntry]]:
        """Words of a split grouped by (writer, page), in corpus order."""
        grouped: Dict[Tuple[str, str], List[WordEntry]] = defaultdict(list)
        for e in self.split(split):
            grouped[(e.writer, e.page)].append(e)
        return dict(grouped)

    def with_validation(self, fraction: float, seed: int) -> "WordCorpus":
        """Move a seeded ``fraction`` of each writer's train words to validation.

        Writers keep at least one train word; an existing validation split is
        left untouched.
        """
        if self.split("validation"):
            return self
        rng = np.random.default_rng(seed)
        moved = set()
        for writer in self.writers:
            train = self.words_of(writer, "train")
            count = min(len(train) - 1, int(math.ceil(fraction * len(train))))
            if count <= 0:
                continue
            for i in rng.choice(len(train), size=count, replace=False):
                moved.add(train[int(i)].path)
        entries = [replace(e, split="validation") if e.path in moved else e for e in self.entries]
        logger.info(f"Carved {len(moved)} validation words from the train split")
        return WordCorpus(entries)

    def validate(self, require_test: bool = True):
        if not self.entries:
            raise EmptyManifest("Corpus has no word entries")
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise DuplicateRow(f"Word image listed twice: {e.path}", {"path": str(e.path)})
            seen.add(e.path)
        # page ids are unique per writer; pages are always keyed by (writer, page)
        if not require_test:
            return
        for writer in self.writers:
            for split in ("train", "test"):
                if not self.words_of(writer, split):
                    raise WriterWithoutTest(f"Writer {writer} has no {split} words",
                                            {"writer": writer, "split": split})


def load_corpus(manifest_path: Union[str, Path], check_images: bool = True,
                require_test: bool = True) -> WordCorpus:
    """Read and validate a manifest CSV; word paths are relative to its directory.

    Calibration corpora pass ``require_test=False``: their writers only
    need words, not a train/test split.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFile(f"Manifest not found: {manifest_path}", {"path": str(manifest_path)})
    root = manifest_path.parent
    entries: List[WordEntry] = []
    with manifest_path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        found = tuple(reader.fieldnames or ())
        if found != MANIFEST_COLUMNS:
            missing = [c for c in MANIFEST_COLUMNS if c not in found]
            extra = [c for c in found if c not in MANIFEST_COLUMNS]
            raise ManifestError(
                f"Manifest header must be {','.join(MANIFEST_COLUMNS)}"
                + (f"; missing {','.join(missing)}" if missing else "")
                + (f"; unexpected {','.join(extra)}" if extra else ""),
                {"found": list(found), "missing": missing, "unexpected": extra},
            )
        keys = set()
        for line, row in enumerate(reader, start=2):
            split = row["split"].strip()
            if split not in SPLITS:
                raise ManifestError(f"Unknown split {split!r} on line {line}; expected one of {', '.join(SPLITS)}",
                                    {"line": line, "split": split})
            key = (row["writer_id"].strip(), row["page_id"].strip(), row["word_path"].strip())
            if key in keys:
                raise DuplicateRow(f"Duplicate manifest row on line {line}", {"line": line})
            keys.add(key)
            path = root / key[2]
            if check_images and not path.exists():
                raise MissingImage(f"Word image not found: {path}", {"path": str(path), "line": line})
            entries.append(WordEntry(key[0], key[1], split, path))
    corpus = WordCorpus(entries)
    corpus.validate(require_test)
    logger.info(f"📚 Loaded corpus {manifest_path.name}: {len(corpus)} words, {len(corpus.writers)} writers")
    return corpus


def write_manifest(corpus: WordCorpus, manifest_path: Union[str, Path]) -> Path:
    """Write the corpus as a manifest CSV with paths relative to its directory."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    root = manifest_path.parent.resolve()
    with manifest_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in corpus.entries:
            path = Path(e.path).resolve()
            try:
                rel = path.relative_to(root).as_posix()
            except ValueError:
                rel = str(path)
            writer.writerow([e.writer, e.page, e.split, rel])
    return manifest_path


def iam_protocol(words: Iterable[Tuple[str, str, Union[str, Path]]], seed: int) -> WordCorpus:
    """Split (writer, page, path) words into one train and one test page per writer.

    Writers with two or more pages contribute two randomly chosen pages: the
    first in sorted order trains, the other tests. A single-page writer's words
    are halved in path order with the larger half training.
    """
    pages: Dict[str, Dict[str, List[Path]]] = defaultdict(lambda: defaultdict(list))
    for writer, page, path in words:
        pages[writer][page].append(Path(path))
    rng = np.random.default_rng(seed)
    entries: List[WordEntry] = []
    for writer in sorted(pages, key=natural_key):
        page_ids = sorted(pages[writer], key=natural_key)
        if len(page_ids) >= 2:
            picked = sorted((page_ids[int(i)] for i in rng.choice(len(page_ids), size=2, replace=False)),
                            key=natural_key)
            for split, page in zip(("train", "test"), picked):
                entries.extend(WordEntry(writer, page, split, p) for p in sorted(pages[writer][page]))
            continue
        page = page_ids[0]
        paths = sorted(pages[writer][page])
        if len(paths) < 2:
            logger.warning(f"⚠️ Writer {writer} has a single word and is left out")
            continue
        cut = int(math.ceil(len(paths) / 2))
        entries.extend(WordEntry(writer, page, "train", p) for p in paths[:cut])
        entries.extend(WordEntry(writer, page, "test", p) for p in paths[cut:])
    return WordCorpus(entries)
