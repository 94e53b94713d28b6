"""Command-line entry point.

Subcommands:

    accumulate   run the knowledge-building phase over the train split
    infer        run adapted (or baseline) rollouts over the test split
    eval         compute metrics from a finished run directory
    kb inspect   print a knowledge-base overview as JSON
    kb validate  check store invariants; nonzero exit on violation

Errors leave as one JSON object on stderr plus a nonzero exit code, so
wrappers never have to parse prose.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from tacit import artifacts, assemble
from tacit.accumulate import run_accumulation
from tacit.config import RunConfig, effective_yaml, load_config, make_run_id, parse_config
from tacit.errors import MissingRequiredError, TacitError
from tacit.evaluation import build_report, load_tasks, split_dataset
from tacit.inference import AugmentedPrompt, prepare_task_knowledge, record_usage
from tacit.retrieval import BankIndex
from tacit.runtime import TaskInstance, run_rollouts
from tacit.store.bank import ExperienceBank, load_experiences, validate_experience
from tacit.store.skills import load_skill


def _fail(exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    return 2


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        return load_config(args.config)
    return parse_config({})


def _select_tasks(config: RunConfig, which: str) -> List[TaskInstance]:
    """Pick the train or test side. With both counts 0 the whole file is
    used unshuffled -- the small-fixture mode."""
    if not config.dataset.path:
        raise MissingRequiredError("dataset.path")
    tasks = load_tasks(config.dataset.path)
    train_n, test_n = config.dataset.train_count, config.dataset.test_count
    if train_n == 0 and test_n == 0:
        return tasks
    split = split_dataset(tasks, train_n, test_n, config.dataset.split_seed)
    return list(split.train if which == "train" else split.test)


def _prepare_run_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        run_dir = Path(config.run.output_dir) / make_run_id(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(effective_yaml(config), encoding="utf-8")
    return run_dir


def _write_task_listing(run_dir: Path, tasks: Sequence[TaskInstance]) -> None:
    listing = [
        {
            "task_id": t.task_id,
            "query": t.query,
            "ground_truth": t.ground_truth,
            "category": t.category,
        }
        for t in tasks
    ]
    artifacts.dump_json(run_dir / "tasks.json", listing)


# ---------------------------------------------------------------------------
# accumulate
# ---------------------------------------------------------------------------

def cmd_accumulate(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    run_dir = _prepare_run_dir(args, config)
    tasks = _select_tasks(config, "train")
    _write_task_listing(run_dir, tasks)

    gateway = assemble.build_gateway(config)
    embedder = assemble.build_embedder(config)
    session_factory = assemble.build_session_factory(config)
    settings = assemble.accumulation_settings_from(config)
    if args.rollouts:
        settings.rollouts = args.rollouts
    runtime_config = assemble.runtime_config_from(config)
    grader = assemble.build_grader(config, gateway)
    bank = ExperienceBank(word_limit=config.params.max_experience_words)
    writer = artifacts.RunWriter(run_dir)
    sink = artifacts.WriterSink(writer)

    result = run_accumulation(
        tasks,
        gateway,
        embedder,
        session_factory,
        settings=settings,
        runtime_config=runtime_config,
        grader=grader,
        bank=bank,
        sink=sink,
    )
    writer.write_kb(result.bank, result.skill, result.index)  # covers the 0-task run

    failed = [o.task.task_id for o in result.outcomes if o.error]
    print(
        f"accumulated {len(result.outcomes)} task(s): "
        f"{len(result.bank)} experience(s), "
        f"skill {'v' + result.skill.metadata.version if result.skill else 'absent'}"
    )
    if failed:
        print(f"failed tasks (skipped): {', '.join(failed)}")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def cmd_infer(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    run_dir = _prepare_run_dir(args, config)
    tasks = _select_tasks(config, "test")
    _write_task_listing(run_dir, tasks)

    gateway = assemble.build_gateway(config)
    session_factory = assemble.build_session_factory(config)
    runtime_config = assemble.runtime_config_from(config)
    rollouts = args.rollouts or config.params.rollouts
    writer = artifacts.RunWriter(run_dir)

    use_knowledge = not args.no_knowledge
    bank = ExperienceBank(word_limit=config.params.max_experience_words)
    skill = None
    index: Optional[BankIndex] = None
    embedder = None
    if use_knowledge:
        if not args.kb:
            raise MissingRequiredError("--kb (or pass --no-knowledge)")
        bank, skill, index = artifacts.load_kb(
            args.kb, word_limit=config.params.max_experience_words
        )
        embedder = assemble.build_embedder(config)
        if index is None:
            index = BankIndex.build(bank, embedder) if len(bank) else BankIndex()
    settings = assemble.adaptation_settings_from(config)

    for task in tasks:
        if use_knowledge:
            knowledge = prepare_task_knowledge(
                task, bank, skill, index, embedder, gateway, settings
            )
            prompt = knowledge.prompt
            writer.write_usage(knowledge.usage)
        else:
            prompt = AugmentedPrompt(user_text=task.query)
        trajectories = run_rollouts(
            task,
            prompt.user_text,
            gateway,
            session_factory,
            config=runtime_config,
            n=rollouts,
            system_text=prompt.system_text,
        )
        for trajectory in trajectories:
            writer.write_trajectory(trajectory)

    print(f"ran {len(tasks)} task(s) x {rollouts} rollout(s) -> {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_ROLLOUT_DIR_RE = re.compile(r"^rollout-(\d+)$")


def _collect_trajectories(run_dir: Path) -> Dict[str, list]:
    by_task: Dict[str, list] = {}
    for task_dir in sorted(run_dir.glob("task-*")):
        rollout_dirs = []
        for child in task_dir.iterdir():
            match = _ROLLOUT_DIR_RE.match(child.name)
            if match and (child / "trajectory.json").exists():
                rollout_dirs.append((int(match.group(1)), child / "trajectory.json"))
        for _, path in sorted(rollout_dirs):
            trajectory = artifacts.load_trajectory(path)
            by_task.setdefault(trajectory.task_id, []).append(trajectory)
    return by_task


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise MissingRequiredError(f"run directory {run_dir}")
    config_path = run_dir / "config.yaml"
    config = load_config(config_path) if config_path.exists() else parse_config({})
    grader_name = args.grader or config.run.grader

    tasks_path = run_dir / "tasks.json"
    if not tasks_path.exists():
        raise MissingRequiredError(f"{tasks_path} (produced by infer/accumulate)")
    listing = json.loads(tasks_path.read_text(encoding="utf-8"))
    tasks = [
        TaskInstance(
            task_id=obj["task_id"],
            query=obj.get("query", ""),
            ground_truth=obj.get("ground_truth", ""),
            category=obj.get("category", ""),
        )
        for obj in listing
    ]

    gateway = assemble.build_gateway(config) if grader_name == "model_judge" else None
    grader = assemble.build_grader(
        parse_config({"run": {"grader": grader_name}}), gateway
    )
    report = build_report(tasks, _collect_trajectories(run_dir), grader, grader_name)
    artifacts.dump_json(run_dir / "report.json", report.to_json_obj())
    (run_dir / "report.txt").write_text(report.render_text(), encoding="utf-8")
    print(report.render_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# kb inspect / validate
# ---------------------------------------------------------------------------

def cmd_kb(args: argparse.Namespace) -> int:
    kb_dir = Path(args.kb_dir)
    if args.kb_command == "inspect":
        overview: dict = {"path": str(kb_dir)}
        exp_path = kb_dir / artifacts.EXPERIENCES_FILE
        if exp_path.exists():
            bank = load_experiences(exp_path)
            entries = bank.entries()
            overview["experiences"] = {
                "count": len(entries),
                "ids": [e.id for e in entries],
                "max_words": max((len(e.text.split()) for e in entries), default=0),
            }
        else:
            overview["experiences"] = None
        skill_path = kb_dir / artifacts.SKILL_FILE
        if skill_path.exists():
            skill = load_skill(skill_path)
            overview["skill"] = {
                "name": skill.metadata.name,
                "version": skill.metadata.version,
                "words": skill.word_count,
                "sections": len(skill.sections),
            }
        else:
            overview["skill"] = None
        print(json.dumps(overview, indent=2, ensure_ascii=False))
        return 0

    # validate
    problems: List[str] = []
    if not kb_dir.is_dir():
        problems.append(f"kb: {kb_dir} is not a directory")
    bank = None
    exp_path = kb_dir / artifacts.EXPERIENCES_FILE
    if exp_path.exists():
        try:
            bank = load_experiences(exp_path, word_limit=args.max_words)
        except TacitError as exc:
            problems.append(f"experiences: {exc}")
    if bank is not None:
        for entry in bank.entries():
            result = validate_experience(entry.text, args.max_words)
            if not result.ok:
                problems.append(
                    f"experiences: {entry.id} is {result.status} ({result.word_count} words)"
                )
        if len(bank) > args.max_entries:
            problems.append(
                f"experiences: {len(bank)} entries exceed the cap of {args.max_entries}"
            )
    skill_path = kb_dir / artifacts.SKILL_FILE
    if skill_path.exists():
        try:
            load_skill(skill_path)
        except TacitError as exc:
            problems.append(f"skill: {exc}")
    vec_path = kb_dir / artifacts.EMBEDDINGS_FILE
    if vec_path.exists():
        try:
            index = artifacts.load_vectors(vec_path)
        except TacitError as exc:
            problems.append(f"embeddings: {exc}")
        else:
            if bank is not None:
                bank_ids = {e.id for e in bank.entries()}
                vec_ids = set(index.ids())
                for missing in sorted(bank_ids - vec_ids):
                    problems.append(f"embeddings: no vector for {missing}")
                for stray in sorted(vec_ids - bank_ids):
                    problems.append(f"embeddings: vector for unknown id {stray}")
    print(json.dumps({"ok": not problems, "problems": problems}, indent=2))
    return 1 if problems else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tacit",
        description="Accumulate, inject, and evaluate agent knowledge without weight updates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the YAML run config")
    common.add_argument("--run-dir", help="run directory (default: <output_dir>/<run-id>)")
    common.add_argument(
        "--rollouts", type=int, default=0, help="override rollouts per task"
    )

    p_acc = sub.add_parser("accumulate", parents=[common], help="build the knowledge base")
    p_acc.set_defaults(func=cmd_accumulate)

    p_inf = sub.add_parser("infer", parents=[common], help="run rollouts on the test split")
    p_inf.add_argument("--kb", help="knowledge-base directory produced by accumulate")
    p_inf.add_argument(
        "--no-knowledge", action="store_true", help="plain tool-agent baseline"
    )
    p_inf.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="score a finished run directory")
    p_eval.add_argument("run_dir", help="run directory with trajectories")
    p_eval.add_argument("--grader", choices=["exact_normalized", "containment", "model_judge"])
    p_eval.set_defaults(func=cmd_eval)

    p_kb = sub.add_parser("kb", help="knowledge-base utilities")
    kb_sub = p_kb.add_subparsers(dest="kb_command", required=True)
    for name, helptext in (
        ("inspect", "print a JSON overview"),
        ("validate", "check store invariants; nonzero exit on violation"),
    ):
        p = kb_sub.add_parser(name, help=helptext)
        p.add_argument("kb_dir", help="kb directory (experiences.json, SKILL.md, ...)")
        p.add_argument("--max-words", type=int, default=64)
        p.add_argument("--max-entries", type=int, default=120)
        p.set_defaults(func=cmd_kb)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TacitError as exc:
        return _fail(exc)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
