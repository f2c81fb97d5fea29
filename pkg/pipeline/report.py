"""Prediction CSVs, summary JSON and Markdown reports."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from jinja2 import BaseLoader, Environment, Template

from core.logger import setup_logger

logger = setup_logger("report")

TOP_COLUMNS = 5


@dataclass
class PredictionRow:
    word_path: str
    true_writer: str
    predicted: str = ""
    rank_of_truth: Optional[int] = None
    top: List[str] = field(default_factory=list)

    def to_csv(self) -> List[str]:
        top = (self.top + [""] * TOP_COLUMNS)[:TOP_COLUMNS]
        rank = "" if self.rank_of_truth is None else str(self.rank_of_truth)
        return [self.word_path, self.true_writer, self.predicted, rank] + top


class ReportWriter:
    """Renders run results into files under one report directory."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.env = Environment(loader=BaseLoader(), trim_blocks=True, lstrip_blocks=True)
        self.templates = self._load_templates()

    def _load_templates(self) -> Dict[str, Template]:
        return {
            "identification": self.env.from_string(IDENTIFICATION_TEMPLATE),
            "experiment": self.env.from_string(EXPERIMENT_TEMPLATE),
        }

    def _write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.out_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
        return path

    def write_identification(self, rows: Sequence[PredictionRow], summary: Dict[str, Any]) -> Dict[str, Path]:
        """predictions.csv (one row per test word), summary.json and summary.md."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = self.out_dir / "predictions.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["word_path", "true_writer", "predicted", "rank_of_truth"]
                            + [f"top{i}" for i in range(1, TOP_COLUMNS + 1)])
            for row in rows:
                writer.writerow(row.to_csv())
        json_path = self._write_json("summary.json", summary)
        md_path = self.out_dir / "summary.md"
        md_path.write_text(self.templates["identification"].render(**summary), encoding="utf-8")
        logger.info(f"📝 Wrote identification report ({len(rows)} words) to {self.out_dir}")
        return {"predictions": csv_path, "summary": json_path, "markdown": md_path}

    def write_experiment(self, name: str, table: Sequence[Dict[str, Any]], summary: Dict[str, Any]) -> Dict[str, Path]:
        """<name>.csv with the result table plus <name>.json and <name>.md."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        columns: List[str] = []
        for row in table:
            columns.extend(c for c in row if c not in columns)
        csv_path = self.out_dir / f"{name}.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows(table)
        payload = dict(summary, experiment=name, table=list(table))
        json_path = self._write_json(f"{name}.json", payload)
        md_path = self.out_dir / f"{name}.md"
        md_path.write_text(
            self.templates["experiment"].render(experiment=name, columns=columns, table=table, **summary),
            encoding="utf-8",
        )
        logger.info(f"📝 Wrote {name} experiment report to {self.out_dir}")
        return {"table": csv_path, "summary": json_path, "markdown": md_path}


IDENTIFICATION_TEMPLATE = """# Writer identification report

| Level | Queries | Top-1 | Top-5 |
|-------|---------|-------|-------|
| Word | {{ words.scored }} | {{ "%.4f"|format(words.top1) }} | {{ "%.4f"|format(words.top5) }} |
{% if pages %}
| Page | {{ pages.scored }} | {{ "%.4f"|format(pages.top1) }} | {{ "%.4f"|format(pages.top5) }} |
{% endif %}

- Layer mode: `{{ layer_mode }}`{% if alpha is not none %} (alpha = {{ "%.2f"|format(alpha) }}){% endif %}

- Pooling: `{{ pooling }}`
- Writers: {{ writers|length }}
- Test words: {{ words.total }} ({{ words.skipped }} without usable fragments)
{% if words_per_writer %}
- Words per writer: {{ words_per_writer }}
{% endif %}
- Config digest: `{{ config_digest[:16] }}`
"""

EXPERIMENT_TEMPLATE = """# {{ experiment }} experiment

| {{ columns|join(" | ") }} |
|{% for c in columns %}---|{% endfor %}

{% for row in table %}
| {% for c in columns %}{{ row.get(c, "") }} | {% endfor %}

{% endfor %}

- Config digest: `{{ config_digest[:16] }}`
{% if note %}
- {{ note }}
{% endif %}
"""
