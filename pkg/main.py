import argparse
import json
import logging
import os
import sys
from typing import Optional

import pandas as pd

from export import emit_plot_data
from model import TrainingRecord, add_records, init_db, list_runs, list_trainings
from utils import (
    PLATFORMS,
    ConfigError,
    InfeasibleError,
    MissingModelError,
    ModelBundle,
    NormalizationSpec,
    ParamsFileError,
    QosPredictor,
    ScenarioFailure,
    ServerSpec,
    Settings,
    ShepherdAgent,
    TrainingDivergedError,
    evaluate_predictor,
    episodes_to_converge,
    generate_corpus,
    load_scenario,
    load_settings,
    read_corpus,
    run_scenario,
    run_suite,
    summarize,
    train_model_a,
    train_model_b,
    train_shepherd,
    transfer_shepherd,
)
from utils.corpus import corpus_paths
from utils.harness import (
    SCHEDULERS,
    build_scenario,
    churn_scenario,
    colocation_suite,
    model_paths,
    report_from_dict,
    three_lc_suite,
    train_command,
)
from utils.params import load_params, save_params

logger = logging.getLogger("schedsim")

EXIT_CODES = (
    (ConfigError, 2),
    (TrainingDivergedError, 3),
    (ScenarioFailure, 4),
    (InfeasibleError, 4),
    (MissingModelError, 5),
    (ParamsFileError, 5),
)

corpus_dir: str = "assets/corpus"


def platform_of(args) -> ServerSpec:
    try:
        return PLATFORMS[args.platform]
    except KeyError:
        raise ConfigError(f"unknown platform {args.platform}; known: {', '.join(PLATFORMS)}")


# Commands
def cmd_generate_corpus(args, settings: Settings) -> None:
    server = platform_of(args)
    held_out = tuple(s for s in (args.held_out or "").split(",") if s)
    files = generate_corpus(
        server,
        args.out or corpus_dir,
        seed=settings.seed,
        n_random=args.random_surfaces,
        grants_per_load=args.grants,
        held_out=held_out,
        unseen=args.unseen,
    )
    print(f"Model-A corpus: {files.model_a} ({files.rows_a} rows)")
    print(f"Model-B corpus: {files.model_b} ({files.rows_b} rows)")
    if files.excluded:
        print(f"Excluded as infeasible: {', '.join(files.excluded)}")


def _pretrained(model_dir: str, platform: Optional[str], key: str, name: str):
    if platform is None:
        return None
    path = model_paths(model_dir, platform)[key]
    if not os.path.exists(path):
        raise MissingModelError(f"no Model-{key} for {platform} at {path}; run: {train_command(key, platform)}")
    return load_params(path)[name]


def cmd_train(args, settings: Settings) -> TrainingRecord:
    server = platform_of(args)
    paths = model_paths(settings.model_dir, server.platform_id)
    os.makedirs(settings.model_dir, exist_ok=True)
    norm = NormalizationSpec.for_server(server)
    norm.save(os.path.join(settings.model_dir, f"{server.platform_id}-normalization.yaml"))
    key = args.model.upper()

    if key in ("A", "B"):
        corpus_a, corpus_b = corpus_paths(args.corpus or corpus_dir, server.platform_id)
        frame, _ = read_corpus(corpus_a if key == "A" else corpus_b)
        name = "model_a" if key == "A" else "model_b"
        pretrained = _pretrained(settings.model_dir, args.transfer_from, key, name)
        train = train_model_a if key == "A" else train_model_b
        predictor, report = train(frame, server, settings, pretrained=pretrained, epochs=args.epochs)
        predictor.save(paths[key])
        metrics = dict(report.extra)
        if args.unseen:
            unseen_a, unseen_b = corpus_paths(args.corpus or corpus_dir, server.platform_id, "unseen")
            unseen, _ = read_corpus(unseen_a if key == "A" else unseen_b)
            metrics["unseen"] = evaluate_predictor(predictor, unseen)
        print(json.dumps(metrics, indent=2))
        return TrainingRecord(
            model=key,
            platform=server.platform_id,
            transfer_from=args.transfer_from,
            epochs=len(report.losses),
            mae=report.mae,
            accuracy=report.extra.get("accuracy"),
            data=json.dumps({"losses": report.losses, **metrics}),
            params_path=paths[key],
        )

    if not os.path.exists(paths["B"]):
        raise MissingModelError(
            f"Model-C training needs Model-B for {server.platform_id}; run: {train_command('B', server.platform_id)}"
        )
    qos = QosPredictor(server, norm, model_path=paths["B"])
    if args.transfer_from:
        pretrained = ShepherdAgent.from_settings(settings)
        pretrained.load_networks(load_params(model_paths(settings.model_dir, args.transfer_from)["C"]))
        agent, report = transfer_shepherd(pretrained, server, settings, qos, episodes=args.episodes)
    else:
        agent, report = train_shepherd(server, settings, qos, episodes=args.episodes)
    save_params(paths["C"], agent.networks())
    converged = episodes_to_converge(report.episode_rewards)
    print(f"Model-C: {len(report.episode_rewards)} episodes, converged after {converged}, {report.rollbacks} rollbacks")
    return TrainingRecord(
        model="C",
        platform=server.platform_id,
        transfer_from=args.transfer_from,
        epochs=len(report.episode_rewards),
        data=json.dumps({"episode_rewards": report.episode_rewards, "episodes_to_converge": converged}),
        params_path=paths["C"],
    )


def _bundle(settings: Settings, server, schedulers) -> Optional[ModelBundle]:
    if "osml+" not in schedulers:
        return None
    return ModelBundle.load(settings.model_dir, server, settings)


def cmd_run(args, settings: Settings):
    scenario = load_scenario(args.scenario)
    bundle = _bundle(settings, scenario.server, [args.scheduler])
    report = run_scenario(scenario, args.scheduler, settings, bundle, out_dir=args.out)
    status = "FAILED" if report.failed else f"{report.convergence_time_ms} ms"
    print(
        f"{report.scheduler} on {report.scenario}: convergence {status}, "
        f"EMU {report.emu:.2f}, BE throughput {report.be_throughput:.3f}"
    )
    print(f"Decisions: {report.decision_log}")
    return [report]


def cmd_run_suite(args, settings: Settings):
    if args.suite == "lc3":
        docs = three_lc_suite(args.n, settings.seed, args.platform)
    elif args.suite == "colocation":
        docs = colocation_suite(args.n, settings.seed, args.platform)
    else:
        docs = [churn_scenario(settings.seed, args.platform)]
    schedulers = tuple(args.schedulers.split(","))
    bundle = _bundle(settings, build_scenario(docs[0]).server, schedulers)
    reports = run_suite(docs, settings, schedulers, bundle, workers=args.workers)
    print_summary(reports, settings)
    return reports


def print_summary(reports, settings: Settings) -> None:
    df = pd.DataFrame([vars(s) for s in summarize(reports, settings.cutoff_ms)]).drop(columns="extra")
    print(df.to_string(index=False))


def stored_reports(engine, args):
    return [report_from_dict(json.loads(r.report)) for r in list_runs(engine, args.scenario, args.suite)]


def cmd_report(args, settings: Settings, engine) -> None:
    reports = stored_reports(engine, args)
    if not reports:
        print("No runs stored")
        return
    print_summary(reports, settings)


def cmd_emit_plots(args, settings: Settings, engine) -> None:
    rewards = {}
    for record in list_trainings(engine, "C"):
        label = f"{record.platform}-{record.id}" + (f"-from-{record.transfer_from}" if record.transfer_from else "")
        rewards[label] = json.loads(record.data).get("episode_rewards", [])
    n = emit_plot_data(args.out, stored_reports(engine, args), rewards)
    print(f"{n} rows written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schedsim", description="Co-location scheduler simulator")
    parser.add_argument("--env", default="dev.env", help="settings file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--tick-ms", type=int)
    parser.add_argument("--cutoff-ms", type=int)
    parser.add_argument("--model-dir")
    parser.add_argument("--log-level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-corpus", help="sweep the simulator into Model-A/B corpora")
    p.add_argument("--platform", default="server1")
    p.add_argument("--out")
    p.add_argument("--random-surfaces", type=int, default=40)
    p.add_argument("--grants", type=int, default=256, help="grants observed per surface and load level")
    p.add_argument("--held-out", help="comma-separated presets kept out of training")
    p.add_argument("--unseen", action="store_true", help="write the held-out evaluation corpus instead")

    p = sub.add_parser("train", help="train Model-A, Model-B or Model-C")
    p.add_argument("model", choices=("a", "b", "c"))
    p.add_argument("--platform", default="server1")
    p.add_argument("--corpus")
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--transfer-from", help="platform whose trained model is the starting point")
    p.add_argument("--unseen", action="store_true", help="also score the held-out corpus")

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("scenario")
    p.add_argument("--scheduler", choices=SCHEDULERS, default="osml+")
    p.add_argument("--out")

    p = sub.add_parser("run-suite", help="run every scheduler over a generated workload suite")
    p.add_argument("suite", choices=("lc3", "colocation", "churn"))
    p.add_argument("--platform", default="server1")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--schedulers", default=",".join(SCHEDULERS))
    p.add_argument("--workers", type=int, default=1)

    for name in ("report", "emit-plots"):
        p = sub.add_parser(name)
        p.add_argument("--scenario")
        p.add_argument("--suite")
        if name == "emit-plots":
            p.add_argument("--out", default="results/plots.jsonl")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings(args.env).override(
        seed=args.seed, tick_ms=args.tick_ms, cutoff_ms=args.cutoff_ms, model_dir=args.model_dir, log_level=args.log_level
    )
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    # Initialize db
    engine = init_db(settings.runs_db)
    if args.command == "generate-corpus":
        cmd_generate_corpus(args, settings)
    elif args.command == "train":
        add_records(engine, [cmd_train(args, settings)])
    elif args.command in ("run", "run-suite"):
        reports = cmd_run(args, settings) if args.command == "run" else cmd_run_suite(args, settings)
        suite = getattr(args, "suite", "")
        add_records(engine, [r.to_record(suite) for r in reports])
    elif args.command == "report":
        cmd_report(args, settings, engine)
    else:
        cmd_emit_plots(args, settings, engine)
    return 0


# Global error handler
def main(argv=None) -> int:
    try:
        return run(argv)
    except Exception as exc:
        for kind, code in EXIT_CODES:
            if isinstance(exc, kind):
                print(f"[Error] {exc}", file=sys.stderr)
                return code
        logger.exception("unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
