"""Benchmark harness: Spider-format dataset loading, batched pipeline
runs with checkpointing, and execution-accuracy reporting.

Per-sample isolation: one sample's crash is contained and scored false;
long runs never die mid-batch.
"""

import csv
import io
import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_HALF_UP

from .pipeline import run_pipeline, append_trace

logger = logging.getLogger(__name__)

DEFAULT_PRICE_PER_MTOK = 15.0


class DatasetError(ValueError):
    pass


class MetricsError(ValueError):
    pass


@dataclass
class Sample:
    index: int
    question: str
    gold_query: str
    db_id: str


@dataclass
class SampleRow:
    index: int
    db_id: str
    final_sql: str
    ea: bool
    valid: bool
    attempts: int
    tokens: int
    cost: float
    stage_error: bool
    exact_match: bool  # diagnostic only; never an accuracy claim


@dataclass
class RunReport:
    rows: list  # of SampleRow, sorted by index
    aggregates: dict


def load_dataset(questions_file, tables_file, db_root, offset=0, limit=None):
    """Load samples plus a schema index and database-path index.

    Samples preserve file order; [offset, limit] selects a mini-batch.
    Every sample's db_id must resolve to both a schema and a database file.
    """
    from .schema import load_tables_json

    schemas = {s.db_id: s for s in load_tables_json(tables_file)}
    with open(questions_file, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise DatasetError(f"{questions_file}: expected a top-level array")

    samples = []
    db_paths = {}
    for i, entry in enumerate(entries):
        try:
            sample = Sample(
                index=i,
                question=entry["question"],
                gold_query=entry["query"],
                db_id=entry["db_id"],
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"{questions_file}: malformed entry {i}: {exc}") from exc
        samples.append(sample)

    window = samples[offset:offset + limit if limit is not None else None]
    for sample in window:
        if sample.db_id not in schemas:
            raise DatasetError(
                f"sample {sample.index}: db_id {sample.db_id!r} not in tables file"
            )
        if sample.db_id not in db_paths:
            path = os.path.join(str(db_root), sample.db_id, sample.db_id + ".sqlite")
            if not os.path.exists(path):
                raise DatasetError(
                    f"sample {sample.index}: database file missing: {path}"
                )
            db_paths[sample.db_id] = path
    return window, schemas, db_paths


def _round2(numerator, denominator) -> float:
    if denominator == 0:
        return 0.0
    value = Decimal(numerator) * 100 / Decimal(denominator)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def compute_metrics(rows) -> dict:
    """Aggregate per-sample rows; percentages to 2 decimal places,
    half-up rounding."""
    if not rows:
        raise MetricsError("no rows to aggregate")
    n = len(rows)
    histogram = {}
    for row in rows:
        histogram[row.attempts] = histogram.get(row.attempts, 0) + 1
    return {
        "samples": n,
        "execution_accuracy": _round2(sum(1 for r in rows if r.ea), n),
        "valid_sql_rate": _round2(sum(1 for r in rows if r.valid), n),
        "exact_match_rate": _round2(sum(1 for r in rows if r.exact_match), n),
        "stage_error_count": sum(1 for r in rows if r.stage_error),
        "mean_attempts": float(
            (Decimal(sum(r.attempts for r in rows)) / Decimal(n)).quantize(
                Decimal("0.01"), rounding=ROUND_HALF_UP
            )
        ),
        "attempts_histogram": {str(k): histogram[k] for k in sorted(histogram)},
        "total_tokens": sum(r.tokens for r in rows),
        "total_cost": float(
            Decimal(str(sum(Decimal(str(r.cost)) for r in rows))).quantize(
                Decimal("0.0001"), rounding=ROUND_HALF_UP
            )
        ),
    }


def _normalize_sql(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().rstrip(";")).lower()


def _row_cost(trace, prices: dict) -> float:
    default = prices.get("default", DEFAULT_PRICE_PER_MTOK)
    cost = 0.0
    for stage in trace.stages:
        price = prices.get(stage.model_id, default)
        cost += (stage.prompt_tokens + stage.completion_tokens) * price / 1_000_000
    return cost


def _run_one(sample, schema, db_path, config, gateway, taxonomy, prices) -> SampleRow:
    try:
        result = run_pipeline(
            sample.question, schema, db_path, config, gateway,
            gold_query=sample.gold_query, taxonomy=taxonomy,
            sample_id=str(sample.index),
        )
    except Exception as exc:  # per-sample isolation: score and continue
        logger.exception("sample %d crashed", sample.index)
        return SampleRow(
            index=sample.index, db_id=sample.db_id, final_sql="",
            ea=False, valid=False, attempts=0, tokens=0, cost=0.0,
            stage_error=True, exact_match=False,
        ), None
    final_sql = result.final_sql.text if result.final_sql else ""
    row = SampleRow(
        index=sample.index,
        db_id=sample.db_id,
        final_sql=final_sql,
        ea=bool(result.ea),
        valid=result.outcome is not None and result.outcome.status == "success",
        attempts=len(result.trace.attempts),
        tokens=result.trace.total_tokens,
        cost=round(_row_cost(result.trace, prices), 8),
        stage_error=result.trace.status == "stage_error",
        exact_match=bool(final_sql)
        and _normalize_sql(final_sql) == _normalize_sql(sample.gold_query),
    )
    return row, result.trace


def _read_checkpoint(path) -> dict:
    rows = {}
    if path and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                data = json.loads(line)
                rows[data["index"]] = SampleRow(**data)  # last write wins
    return rows


def evaluate(samples, schemas, db_paths, config, gateway, taxonomy=None,
             parallelism=4, checkpoint_path=None, trace_path=None,
             prices=None) -> RunReport:
    """Run the pipeline over a sample batch and report metrics.

    Resumable: rows already in the checkpoint file are not re-run, so an
    interrupted batch picks up where it stopped.
    """
    prices = prices or {}
    done = _read_checkpoint(checkpoint_path)
    pending = [s for s in samples if s.index not in done]

    checkpoint_lock = threading.Lock()

    def work(sample):
        row, trace = _run_one(
            sample, schemas[sample.db_id], db_paths[sample.db_id],
            config, gateway, taxonomy, prices,
        )
        if trace is not None and trace_path:
            append_trace(trace, trace_path)
        if checkpoint_path:
            with checkpoint_lock:
                with open(checkpoint_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(row), sort_keys=True) + "\n")
        return row

    rows = list(done.values())
    if pending:
        if parallelism <= 1:
            rows.extend(work(s) for s in pending)
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                rows.extend(pool.map(work, pending))

    wanted = {s.index for s in samples}
    rows = sorted((r for r in rows if r.index in wanted), key=lambda r: r.index)
    return RunReport(rows=rows, aggregates=compute_metrics(rows))


def write_report(report: RunReport, out_dir) -> dict:
    """Emit report.json (full fidelity), per_sample.csv, and summary.txt.

    Deterministic: identical reports produce byte-identical files.
    """
    os.makedirs(str(out_dir), exist_ok=True)
    paths = {
        "json": os.path.join(str(out_dir), "report.json"),
        "csv": os.path.join(str(out_dir), "per_sample.csv"),
        "summary": os.path.join(str(out_dir), "summary.txt"),
    }

    payload = {
        "aggregates": report.aggregates,
        "rows": [asdict(r) for r in report.rows],
    }
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["index", "db_id", "ea", "valid", "attempts", "tokens", "cost",
              "stage_error", "exact_match", "final_sql"]
    writer.writerow(header)
    for r in report.rows:
        writer.writerow([
            r.index, r.db_id, int(r.ea), int(r.valid), r.attempts, r.tokens,
            f"{r.cost:.8f}", int(r.stage_error), int(r.exact_match), r.final_sql,
        ])
    with open(paths["csv"], "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())

    agg = report.aggregates
    summary = "\n".join([
        f"samples:             {agg['samples']}",
        f"execution accuracy:  {agg['execution_accuracy']:.2f}%",
        f"valid SQL rate:      {agg['valid_sql_rate']:.2f}%",
        f"exact match rate:    {agg['exact_match_rate']:.2f}%  (diagnostic only)",
        f"stage errors:        {agg['stage_error_count']}",
        f"mean attempts:       {agg['mean_attempts']:.2f}",
        f"total tokens:        {agg['total_tokens']}",
        f"total cost:          ${agg['total_cost']:.4f}",
        "",
    ])
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        fh.write(summary)
    return paths
