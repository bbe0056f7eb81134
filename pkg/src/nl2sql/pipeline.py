"""Pipeline orchestration: sequential agent stages, execution, and the
bounded taxonomy-guided correction loop, with a complete per-sample trace.

A single run is strictly sequential; many runs may proceed concurrently,
sharing only immutable schema/taxonomy/config and the gateway.
"""

import hashlib
import json
import threading
from dataclasses import dataclass, field, asdict

from . import agents
from .schema import render_schema_text
from .execution import (
    SanitizeError,
    SqlQuery,
    compare_results,
    execute,
    has_top_level_order_by,
    sanitize,
)
from .taxonomy import default_taxonomy

TRIGGER_MODES = ("execution_error_only", "gold_mismatch")


@dataclass
class StageRecord:
    role: str
    prompt: str
    response: str
    artifact_digest: str
    model_id: str
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    warnings: list = field(default_factory=list)


@dataclass
class AttemptRecord:
    sql: str
    status: str  # success | failure | timeout | sanitize_error
    error_kind: str = ""
    message: str = ""
    row_count: int = 0
    ea: bool | None = None
    repeat_of_earlier: bool = False


@dataclass
class PipelineTrace:
    sample_id: str
    stages: list = field(default_factory=list)
    attempts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    status: str = "running"  # solved | exhausted | stage_error

    def add_stage(self, role, prompt, response, model_id, warnings=None):
        self.stages.append(
            StageRecord(
                role=role,
                prompt=prompt,
                response=response.content,
                artifact_digest=hashlib.sha256(
                    response.content.encode("utf-8")
                ).hexdigest()[:16],
                model_id=model_id,
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
                wall_time=response.latency,
                warnings=list(warnings or []),
            )
        )

    def add_warning(self, message):
        self.warnings.append(message)

    @property
    def total_tokens(self):
        return sum(s.prompt_tokens + s.completion_tokens for s in self.stages)


@dataclass
class PipelineConfig:
    max_correction_attempts: int = 3
    skip_query_plan: bool = False
    skip_correction: bool = False
    correction_trigger: str = "gold_mismatch"
    timeout: float = 30.0
    templates: dict | None = None
    sql_agent_sees_schema: bool = False

    def __post_init__(self):
        if self.max_correction_attempts < 0:
            raise ValueError("max_correction_attempts must be >= 0")
        if self.correction_trigger not in TRIGGER_MODES:
            raise ValueError(f"unknown correction trigger {self.correction_trigger!r}")


@dataclass
class PipelineResult:
    final_sql: SqlQuery | None
    outcome: object  # ExecutionOutcome or None
    ea: bool | None
    trace: PipelineTrace


def repeat_guard(previous_sqls, candidate_sql: str) -> bool:
    """True when the candidate is whitespace-normalized identical to any
    prior attempt. Flagged attempts still execute; identical SQL can
    succeed if the prior failure was transient."""
    norm = " ".join(candidate_sql.split())
    return any(" ".join(p.split()) == norm for p in previous_sqls)


def _feedback_text(outcome, ea, gold_present) -> str:
    if outcome is None:
        return "the response did not contain an executable SQL statement"
    if outcome.status == "timeout":
        return "execution timed out"
    if outcome.status == "failure":
        return f"{outcome.error_kind} error: {outcome.message}"
    if gold_present and ea is False:
        sample = outcome.rows[:5]
        return (
            "the query executed without error but returned a wrong result: "
            f"{len(outcome.rows)} row(s) with {outcome.column_count} column(s), "
            f"first rows {sample!r}, which do not match the expected answer"
        )
    return "execution succeeded"


def run_pipeline(question, schema, db_file, config: PipelineConfig, gateway,
                 gold_query: str | None = None, taxonomy=None,
                 sample_id: str = "") -> PipelineResult:
    """Run the full agent pipeline for one question.

    Stage order: schema_linking, subproblem, query_plan (unless skipped),
    sql, sanitize, execute; then correction rounds of correction_plan,
    correction_sql, sanitize, execute until the trigger stops firing or
    the round budget is spent.
    """
    if config.correction_trigger == "gold_mismatch" and not gold_query:
        raise ValueError("gold_mismatch trigger requires a gold query")
    taxonomy = taxonomy or default_taxonomy()
    templates = config.templates or agents.load_default_templates()
    trace = PipelineTrace(sample_id=sample_id or question[:48])

    gold_outcome = None
    order_sensitive = False
    if gold_query:
        gold_sql = SqlQuery(gold_query.strip().rstrip(";"))
        gold_outcome = execute(db_file, gold_sql, timeout=config.timeout)
        order_sensitive = has_top_level_order_by(gold_sql)

    def verdict(outcome):
        if gold_outcome is None:
            return None
        return compare_results(gold_outcome, outcome, order_sensitive)

    def trigger_fires(outcome, ea):
        if outcome is None or outcome.status != "success":
            return True
        if config.correction_trigger == "gold_mismatch":
            return ea is False
        return False

    try:
        linked = agents.run_schema_linking(question, schema, gateway, trace, templates)
        subproblems = agents.run_subproblem(
            question, linked, gateway, trace, templates, parent_schema=schema
        )
        if config.skip_query_plan:
            plan_text = "Clause-level subproblems:\n" + subproblems.render()
        else:
            plan = agents.run_query_plan(
                question, linked, subproblems, gateway, trace, templates,
                parent_schema=schema,
            )
            plan_text = plan.render()
        schema_text = ""
        if config.sql_agent_sees_schema:
            schema_text = (
                "Relevant schema:\n"
                + render_schema_text(linked, parent=schema)
                + "\n"
            )
        raw_sql = agents.run_sql(
            question, plan_text, gateway, trace, templates, schema_text=schema_text
        )
    except agents.StageError as exc:
        trace.status = "stage_error"
        trace.add_warning(str(exc))
        return PipelineResult(None, None, None, trace)

    def attempt(raw_text, previous_sqls):
        """Sanitize + execute one candidate; returns (query, outcome, ea)."""
        try:
            query = sanitize(raw_text)
        except SanitizeError as exc:
            trace.attempts.append(
                AttemptRecord(sql="", status="sanitize_error", message=str(exc))
            )
            return None, None, None
        repeated = repeat_guard(previous_sqls, query.text)
        outcome = execute(db_file, query, timeout=config.timeout)
        ea = verdict(outcome)
        trace.attempts.append(
            AttemptRecord(
                sql=query.text,
                status=outcome.status,
                error_kind=outcome.error_kind,
                message=outcome.message,
                row_count=len(outcome.rows),
                ea=ea,
                repeat_of_earlier=repeated,
            )
        )
        return query, outcome, ea

    previous_sqls = []
    query, outcome, ea = attempt(raw_sql, previous_sqls)
    if query is not None:
        previous_sqls.append(query.text)

    rounds = 0
    while (
        trigger_fires(outcome, ea)
        and not config.skip_correction
        and rounds < config.max_correction_attempts
    ):
        rounds += 1
        failed_sql = query.text if query else "(no executable SQL was produced)"
        feedback = _feedback_text(outcome, ea, gold_outcome is not None)
        try:
            plan = agents.run_correction_plan(
                question, linked, failed_sql, feedback, taxonomy,
                gateway, trace, templates, parent_schema=schema,
            )
            raw_fixed = agents.run_correction_sql(
                question, linked, plan, failed_sql,
                gateway, trace, templates, parent_schema=schema,
            )
        except agents.StageError as exc:
            trace.status = "stage_error"
            trace.add_warning(str(exc))
            return PipelineResult(query, outcome, ea, trace)
        new_query, new_outcome, new_ea = attempt(raw_fixed, previous_sqls)
        if new_query is not None:
            previous_sqls.append(new_query.text)
            query, outcome, ea = new_query, new_outcome, new_ea
        else:
            query, outcome, ea = new_query or query, new_outcome, new_ea

    trace.status = "exhausted" if trigger_fires(outcome, ea) else "solved"
    return PipelineResult(query, outcome, ea, trace)


_trace_write_lock = threading.Lock()


def append_trace(trace: PipelineTrace, path) -> None:
    """Append one line-delimited JSON record per sample to a trace file."""
    record = asdict(trace)
    with _trace_write_lock:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_traces(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
