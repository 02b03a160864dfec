"""Command-line entry points.

Subcommands: ``repl`` (interactive combat), ``serve`` (HTTP service),
``roll``, ``replay``, ``distill``, ``prompts``, and the ``eval`` family
(``passrate``, ``unittests``, ``metrics``). The data directory defaults to
$FIREBALL_DATA_DIR, then ./data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dice, engine, eventlog, evalkit, pipeline, prompts
from .content import ContentError, load_content_file, load_starter_pack
from .service import AppConfig, load_bundled_party
from .session import CombatSession
from .state import SchemaError


def _data_dir(args) -> Path:
    if getattr(args, "data_dir", None):
        return Path(args.data_dir)
    return Path(os.environ.get("FIREBALL_DATA_DIR", "data"))


def _load_pack(args):
    if getattr(args, "pack", None):
        return load_content_file(args.pack)
    return load_starter_pack()


def _load_party(spec: str) -> dict:
    path = Path(spec)
    if path.exists():
        return json.loads(path.read_text("utf-8"))
    try:
        return load_bundled_party(spec)
    except KeyError:
        raise SystemExit(f"no party file or bundled party named {spec!r}")


def _load_scenarios(args) -> list[evalkit.UnitScenario]:
    spec = getattr(args, "scenarios", None)
    if not spec:
        return evalkit.bundled_scenarios()
    path = Path(spec)
    if path.is_dir():
        return [evalkit.load_scenario_file(p) for p in sorted(path.glob("*.json"))]
    return [evalkit.load_scenario_file(path)]


def cmd_roll(args) -> int:
    src = dice.SeededSource(args.seed) if args.seed is not None else dice.SeededSource(
        int.from_bytes(os.urandom(8), "big")
    )
    try:
        result = dice.roll_text(args.expression, src)
    except dice.DiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(dice.format_roll(result))
    return 0


def cmd_repl(args) -> int:
    index = _load_pack(args)
    party = _load_party(args.party)
    data_dir = _data_dir(args)
    session = CombatSession.create(party, index, seed=args.seed, data_dir=data_dir, dm="dm")
    state = session.state
    print(f"session {session.combat_id} -> {data_dir / (session.combat_id + '.jsonl')}")
    for line in state.actor_lines():
        print(line)
    print(engine.turn_banner(state))
    print("type !commands, plain text to talk, :state for the roster, :quit to leave")
    while True:
        try:
            raw = input("> ").strip()
        except EOFError:
            print()
            break
        if not raw:
            continue
        if raw == ":quit":
            break
        if raw == ":state":
            for line in state.actor_lines():
                print(line)
            print(engine.turn_banner(state))
            continue
        if raw.startswith("!"):
            try:
                report, _ = session.command(raw, author_id="player")
            except (engine.EngineError, ContentError, dice.DiceError, SchemaError) as exc:
                print(f"error: {exc}")
                continue
            for line in report.mechanical_lines:
                print(line)
            for delta in report.state_delta:
                if delta["field"] == "hp":
                    print(f"  {delta['id']}: {delta['old']} -> {delta['new']} HP")
            if session.ended:
                print("combat over; log closed")
                break
        else:
            session.message("player", raw)
    session.close()
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = AppConfig(
        data_dir=_data_dir(args),
        content_pack=Path(args.pack) if args.pack else None,
        seed=args.seed,
        port=args.port,
        predictor=args.predictor,
        predictor_timeout=args.timeout,
        console_dir=Path(args.console) if args.console else None,
    )
    from .service import create_app

    uvicorn.run(create_app(config), host=args.host, port=config.port, log_level="info")
    return 0


def cmd_replay(args) -> int:
    index = _load_pack(args)
    events = eventlog.read_events(args.log)
    try:
        final = eventlog.replay(events, index)
    except eventlog.EventLogError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    print(f"replayed {len(events)} events")
    for line in final.actor_lines():
        print(line)
    return 0


def cmd_distill(args) -> int:
    classifier = pipeline.HeuristicClassifier()
    triples = []
    counts = {c: 0 for c in pipeline.CATEGORY_ORDER}
    for log_path in args.logs:
        events = eventlog.read_events(log_path)
        triples.extend(pipeline.distill(events, classifier))
        for category, n in pipeline.categorize_commands(events).items():
            counts[category] += n
    n = pipeline.write_triples(triples, args.out)
    print(f"wrote {n} triples to {args.out}")
    print(pipeline.stats_report(counts))
    if args.stats:
        Path(args.stats).write_text(json.dumps(counts, indent=2) + "\n", "utf-8")
        print(f"wrote category counts to {args.stats}")
    return 0


def cmd_prompts(args) -> int:
    events = eventlog.read_events(args.log)
    triples = pipeline.read_triples(args.triples)
    records = prompts.build_prompt_records(events, triples)
    if args.task != "both":
        records = [r for r in records if r.task == args.task]
    n = prompts.write_records(records, args.out)
    print(f"wrote {n} prompt records to {args.out}")
    return 0


def _read_predictions(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def cmd_eval_passrate(args) -> int:
    index = _load_pack(args)
    scenarios = {s.id: s for s in _load_scenarios(args)}
    items = []
    for row in _read_predictions(args.pred):
        scenario = scenarios.get(row.get("id", ""))
        if scenario is None:
            print(f"skipping prediction with unknown scenario id {row.get('id')!r}", file=sys.stderr)
            continue
        items.append((row["prediction"], scenario.build_state(), scenario.caster))
    fraction, per_item = evalkit.pass_rate(items, index)
    print(f"pass rate: {fraction:.3f} ({sum(1 for i in per_item if i['ok'])}/{len(per_item)})")
    if args.out:
        Path(args.out).write_text(
            json.dumps({"pass_rate": fraction, "per_item": per_item}, indent=2) + "\n", "utf-8"
        )
    return 0


def cmd_eval_unittests(args) -> int:
    index = _load_pack(args)
    scenarios = _load_scenarios(args)
    predictor = evalkit.make_predictor(
        args.predictor, scenarios=scenarios, index=index, p=args.p, seed=args.seed,
        timeout=args.timeout,
    )
    fraction, details = evalkit.run_unit_tests(scenarios, predictor, index, n=args.n)
    print(f"unit tests: {fraction:.3f}")
    for row in details:
        flag = "" if row["must_fail_ok"] else "  [must_fail violated]"
        print(f"  {row['id']}: {row['passed']}/{row['total']}{flag}")
    if args.out:
        Path(args.out).write_text(
            json.dumps({"unit_pass": fraction, "scenarios": details}, indent=2, default=str) + "\n",
            "utf-8",
        )
    return 0


def cmd_eval_metrics(args) -> int:
    by_prompt = {}
    by_id = {}
    for record in prompts.read_records(args.ref):
        if record.completion is not None:
            by_prompt[record.prompt] = record.completion
            by_id.setdefault(record.source, record.completion)
    pairs = []
    skipped = 0
    for row in _read_predictions(args.pred):
        # the prompt pins the exact task instance; ids are provenance and may
        # be shared by the two task records built from one triple
        reference = by_prompt.get(row.get("prompt", "")) or by_id.get(row.get("id"))
        if reference is None:
            skipped += 1
            continue
        pairs.append((reference, row["prediction"]))
    report = evalkit.score_text_metrics(pairs)
    print(report.table())
    if skipped:
        print(f"({skipped} predictions had no matching reference)", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", "utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modron", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_roll = sub.add_parser("roll", help="roll a dice expression")
    p_roll.add_argument("expression")
    p_roll.add_argument("--seed", type=int, default=None)
    p_roll.set_defaults(fn=cmd_roll)

    p_repl = sub.add_parser("repl", help="interactive combat session")
    p_repl.add_argument("--party", default="appendix_f", help="bundled party name or JSON path")
    p_repl.add_argument("--pack", default=None, help="content pack JSON path")
    p_repl.add_argument("--seed", type=int, default=0)
    p_repl.add_argument("--data-dir", default=None)
    p_repl.set_defaults(fn=cmd_repl)

    p_serve = sub.add_parser("serve", help="run the HTTP session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8434)
    p_serve.add_argument("--pack", default=None)
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--data-dir", default=None)
    p_serve.add_argument("--predictor", choices=["gold", "external"], default="gold")
    p_serve.add_argument("--timeout", type=float, default=30.0, help="predictor request timeout")
    p_serve.add_argument("--console", default=None, help="serve a built web console from this dir")
    p_serve.set_defaults(fn=cmd_serve)

    p_replay = sub.add_parser("replay", help="re-execute a session log and verify it")
    p_replay.add_argument("--log", required=True)
    p_replay.add_argument("--pack", default=None)
    p_replay.set_defaults(fn=cmd_replay)

    p_distill = sub.add_parser("distill", help="distill logs into training triples")
    p_distill.add_argument("--log", dest="logs", action="append", required=True)
    p_distill.add_argument("--out", required=True)
    p_distill.add_argument("--stats", default=None, help="also write category counts JSON")
    p_distill.set_defaults(fn=cmd_distill)

    p_prompts = sub.add_parser("prompts", help="render prompt records from a log + triples")
    p_prompts.add_argument("--log", required=True)
    p_prompts.add_argument("--triples", required=True)
    p_prompts.add_argument("--out", required=True)
    p_prompts.add_argument("--task", choices=["both", "utt2cmd", "sta2nar"], default="both")
    p_prompts.set_defaults(fn=cmd_prompts)

    p_eval = sub.add_parser("eval", help="score predictions")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_pass = eval_sub.add_parser("passrate", help="fraction of predictions that execute")
    p_pass.add_argument("--pred", required=True, help="jsonl of {id, prompt, prediction}")
    p_pass.add_argument("--scenarios", default=None, help="scenario dir/file (default: bundled)")
    p_pass.add_argument("--pack", default=None)
    p_pass.add_argument("--out", default=None)
    p_pass.set_defaults(fn=cmd_eval_passrate)

    p_unit = eval_sub.add_parser("unittests", help="state-assertion scenarios")
    p_unit.add_argument("--predictor", choices=["gold", "wrong-target", "corrupt", "external"], default="gold")
    p_unit.add_argument("--n", type=int, default=10, help="generations per scenario")
    p_unit.add_argument("--p", type=float, default=0.3, help="corruption probability")
    p_unit.add_argument("--seed", type=int, default=0)
    p_unit.add_argument("--timeout", type=float, default=30.0)
    p_unit.add_argument("--scenarios", default=None)
    p_unit.add_argument("--pack", default=None)
    p_unit.add_argument("--out", default=None)
    p_unit.set_defaults(fn=cmd_eval_unittests)

    p_metrics = eval_sub.add_parser("metrics", help="token metrics vs gold completions")
    p_metrics.add_argument("--pred", required=True)
    p_metrics.add_argument("--ref", required=True, help="prompts.jsonl with gold completions")
    p_metrics.add_argument("--out", default=None)
    p_metrics.set_defaults(fn=cmd_eval_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
