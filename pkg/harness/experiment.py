"""
EGA - Experiment driver
Everything lives under one output directory:

    data/ads.jsonl, data/users.jsonl, data/popularity.json, data/world.json
    data/train.jsonl, data/test.jsonl
    checkpoints/<phase>.ckpt
    metrics.jsonl
    reports/<run_id>-<phase>.json
    report.csv

Phases run in the order pretrain -> reward -> rlaf -> payment; each one starts
from the checkpoint of the phase before it.
"""
import itertools
import json
import logging
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from evaluation.exceptions import FlopsConfigError
from evaluation.flops import FlopsConfig, FlopsReport, flops_closed_form, flops_compare, measure_sections
from evaluation.metrics import auc_score, deviation, expected_value_metrics, realized_metrics, recall_at_k
from evaluation.regret import psi_from_terms, request_regret_terms
from evaluation.reports import MetricReport
from feature_store.corpus import iter_jsonl, read_ads, read_users, write_ads, write_jsonl, write_popularity, write_users
from feature_store.records import AdFeatureRecord, UserFeatureRecord
from numerics.checkpoint import load_store, save_store
from training.metrics_log import MetricsLog
from training.model import PHASES, EGAModel
from training.phases import run_payment, run_pretrain, run_reward, run_rlaf
from training.samples import RequestSample
from training.serializers import RequestSampleSerializer

from .config import RunConfig
from .exceptions import MissingCheckpointError
from .report import RunReport, write_report
from .world import World, generate_world, simulate_request, simulate_requests

logger = logging.getLogger(__name__)

DATA_DIR = "data"
CHECKPOINT_DIR = "checkpoints"
CSV_FILE = "report.csv"
PIPELINE = PHASES + ("evaluate",)
GSP_VARIANT = "gsp"


# ==============================================================================
# Layout
# ==============================================================================

@dataclass(frozen=True)
class RunPaths:
    out: Path

    @property
    def data(self) -> Path:
        return self.out / DATA_DIR

    @property
    def manifest(self) -> Path:
        return self.data / "world.json"

    def split(self, name: str) -> Path:
        return self.data / f"{name}.jsonl"

    def checkpoint(self, phase: str) -> Path:
        return self.out / CHECKPOINT_DIR / f"{phase}.ckpt"

    @property
    def csv(self) -> Path:
        return self.out / CSV_FILE


@dataclass
class Dataset:
    world: World
    ads: List[AdFeatureRecord]
    users: List[UserFeatureRecord]
    train: List[RequestSample] = field(default_factory=list)
    test: List[RequestSample] = field(default_factory=list)


def _manifest(config: RunConfig) -> dict:
    return {**asdict(config.world), "n_train": config.n_train, "n_test": config.n_test}


# ==============================================================================
# Data
# ==============================================================================

def gen_data(config: RunConfig, out) -> Dataset:
    """Generate the world and both request splits, and write them under <out>/data."""
    paths = RunPaths(Path(out))
    world = generate_world(config.world)
    n_jobs = settings.EGA_N_JOBS
    dataset = Dataset(
        world=world,
        ads=world.ads,
        users=world.users,
        train=simulate_requests(world, config.n_train, "train", n_jobs=n_jobs),
        test=simulate_requests(world, config.n_test, "test", n_jobs=n_jobs),
    )
    write_ads(paths.split("ads"), dataset.ads)
    write_users(paths.split("users"), dataset.users)
    write_popularity(paths.data / "popularity.json", world.corpus)
    write_jsonl(paths.split("train"), dataset.train, RequestSampleSerializer)
    write_jsonl(paths.split("test"), dataset.test, RequestSampleSerializer)
    paths.manifest.write_text(json.dumps(_manifest(config), sort_keys=True), encoding="utf-8")
    logger.info(f"Data written to {paths.data}: {len(dataset.ads)} ads, {len(dataset.users)} users, "
                f"{len(dataset.train)} train / {len(dataset.test)} test requests")
    return dataset


def prepare(config: RunConfig, out) -> Dataset:
    """Reuse the data under <out>/data when it was generated from this world, else generate it."""
    paths = RunPaths(Path(out))
    if not paths.manifest.is_file():
        return gen_data(config, out)
    if json.loads(paths.manifest.read_text(encoding="utf-8")) != _manifest(config):
        logger.warning(f"Data under {paths.data} comes from another world config; regenerating")
        return gen_data(config, out)
    world = generate_world(config.world)
    users = read_users(paths.split("users"))
    dataset = Dataset(
        world=world,
        ads=read_ads(paths.split("ads")),
        users=[users[user_id] for user_id in sorted(users)],
        train=list(iter_jsonl(paths.split("train"), RequestSampleSerializer)),
        test=list(iter_jsonl(paths.split("test"), RequestSampleSerializer)),
    )
    logger.info(f"Reusing data under {paths.data}")
    return dataset


def build_model(config: RunConfig, dataset: Dataset) -> EGAModel:
    model = EGAModel(config.model, config.world.schema, dataset.ads, seed=config.seed,
                     namespace=f"run-{config.run_id}")
    model.features.publish_users(dataset.users)
    return model


# ==============================================================================
# Training phases
# ==============================================================================

def require_checkpoints(paths: RunPaths, phase: str) -> None:
    """Every phase before `phase` must have left its checkpoint; names the earliest missing one."""
    for previous in PHASES[:PHASES.index(phase)]:
        path = paths.checkpoint(previous)
        if not path.is_file():
            raise MissingCheckpointError(previous, path)


def latest_checkpoint(paths: RunPaths) -> Optional[str]:
    for phase in reversed(PHASES):
        if paths.checkpoint(phase).is_file():
            return phase
    return None


def run_phase(config: RunConfig, out, phase: str, dataset: Optional[Dataset] = None,
              log: Optional[MetricsLog] = None) -> List[float]:
    """Load the previous checkpoint, train one phase and save its checkpoint; returns the step losses."""
    paths = RunPaths(Path(out))
    if phase not in PHASES:
        raise ValueError(f"unknown phase '{phase}', expected one of {PHASES}")
    require_checkpoints(paths, phase)
    dataset = dataset or prepare(config, out)
    log = log or MetricsLog.in_directory(paths.out)
    model = build_model(config, dataset)
    index = PHASES.index(phase)
    if index:
        load_store(paths.checkpoint(PHASES[index - 1]), model.store)

    losses: List[float] = []
    if config.allocator == "gsp" and phase in ("rlaf", "payment"):
        logger.info(f"Phase {phase} skipped: allocator is gsp, checkpoint carried forward")
    else:
        phase_settings = config.phase_settings(phase)
        rng = np.random.default_rng([config.seed, 100 + index])
        if phase == "pretrain":
            losses = run_pretrain(model, dataset.train, phase_settings, rng, log)
        elif phase == "reward":
            losses = run_reward(model, dataset.train, phase_settings, rng, log)
        elif phase == "rlaf":
            losses = run_rlaf(model, dataset.train, phase_settings, rng, log)
        else:
            losses, _ = run_payment(model, dataset.train, phase_settings, rng, log)
    save_store(paths.checkpoint(phase), model.store)
    return losses


# ==============================================================================
# Evaluation
# ==============================================================================

@dataclass
class SlateResult:
    ctr: np.ndarray
    payments: np.ndarray
    probabilities: np.ndarray
    regrets: List[float]
    utilities: List[float]


@dataclass
class RequestEvaluation:
    scores: np.ndarray
    labels: np.ndarray
    recall: Optional[float]
    slates: Dict[str, SlateResult]


def _replay(world: World, sample: RequestSample, encoded, mechanism) -> SlateResult:
    outcome = mechanism(encoded.bids)
    shown = [encoded.ad_ids[w] for w in outcome.winners]
    regrets, utilities = request_regret_terms(mechanism, encoded.bids, encoded.values)
    return SlateResult(
        ctr=np.asarray(outcome.ctr, dtype=np.float64),
        payments=np.asarray(outcome.payments, dtype=np.float64),
        probabilities=world.oracle.probabilities(sample.user_id, shown, slots=range(len(shown))),
        regrets=regrets,
        utilities=utilities,
    )


def evaluate_request(config: RunConfig, model: EGAModel, world: World, sample: RequestSample) -> RequestEvaluation:
    ranked = model.encode_frozen(sample.sample_ads, sample.user_id)
    encoded = model.encode_frozen(sample.candidates, sample.user_id)

    labels = world.oracle.sample_clicks(sample.user_id, sample.candidates,
                                        world.request_rng("recall", sample.request_id))
    recall = recall_at_k(encoded.ctr, labels, min(config.recall_k, len(sample.candidates)))

    ega = model.mechanism(encoded)
    gsp = model.gsp_mechanism(encoded, slate_ctr=ega.slate_ctr)
    if config.allocator == "gsp":
        mechanisms = {config.variant: gsp}
    else:
        mechanisms = {config.variant: ega, GSP_VARIANT: gsp}
    return RequestEvaluation(
        scores=ranked.ctr,
        labels=sample.sample_labels[:, 0],
        recall=recall,
        slates={name: _replay(world, sample, encoded, mechanism) for name, mechanism in mechanisms.items()},
    )


def _variant_report(config: RunConfig, variant: str, index: int, evaluations: Sequence[RequestEvaluation],
                    world: World, auc: Optional[float], recall: Optional[float]) -> MetricReport:
    slates = [evaluation.slates[variant] for evaluation in evaluations]
    ectr, erpm = expected_value_metrics((s.ctr, s.payments) for s in slates)
    realized_ctr, realized_rpm = realized_metrics(((s.probabilities, s.payments) for s in slates),
                                                  world.request_rng("replay", index))
    mean_pctr = float(np.mean(np.concatenate([s.ctr for s in slates]))) * 100.0
    psi = psi_from_terms(itertools.chain.from_iterable(s.regrets for s in slates),
                         list(itertools.chain.from_iterable(s.utilities for s in slates)))
    return MetricReport(
        run_id=config.run_id,
        variant=variant,
        auc=auc,
        recall_at_k=recall,
        ectr=ectr,
        erpm=erpm,
        deviation=deviation(mean_pctr, realized_ctr),
        psi=psi.psi,
        psi_skipped=psi.skipped,
        mean_regret=psi.mean_regret,
        realized_ctr=realized_ctr,
        realized_rpm=realized_rpm,
        requests=len(slates),
    )


def measure_model_flops(config: RunConfig, model: EGAModel, sample: RequestSample) -> FlopsReport:
    """Closed-form FLOPs next to the counters one request spends through the model."""
    report = flops_closed_form(FlopsConfig(
        n=len(sample.candidates), l=config.l, d=config.d, n_c=config.n_clusters,
        m=config.m, m_c=config.m_c, m_e=config.m_e, k=config.k,
    ))

    def run():
        encoded = model.encode_frozen(sample.candidates, sample.user_id)
        model.mechanism(encoded)(encoded.bids)

    return flops_compare(measure_sections(run), report)


def evaluate(config: RunConfig, out, dataset: Optional[Dataset] = None,
             model: Optional[EGAModel] = None) -> Tuple[List[MetricReport], Optional[FlopsReport]]:
    """Score the test split with the latest checkpoint (or an untrained model) and the GSP baseline."""
    paths = RunPaths(Path(out))
    dataset = dataset or prepare(config, out)
    if model is None:
        model = build_model(config, dataset)
        phase = latest_checkpoint(paths)
        if phase is None:
            logger.warning(f"No checkpoint under {paths.out}; evaluating an untrained model")
        else:
            load_store(paths.checkpoint(phase), model.store)
            logger.info(f"Evaluating the '{phase}' checkpoint on {len(dataset.test)} requests")

    n_jobs = settings.EGA_N_JOBS
    limits = threadpool_limits(limits=1) if n_jobs == 1 else nullcontext()
    with limits:
        evaluations = list(Parallel(n_jobs=n_jobs, backend="threading")(
            delayed(evaluate_request)(config, model, dataset.world, sample) for sample in dataset.test
        ))

    auc = auc_score(np.concatenate([e.scores for e in evaluations]), np.concatenate([e.labels for e in evaluations]))
    recalls = [e.recall for e in evaluations if e.recall is not None]
    recall = float(np.mean(recalls)) if recalls else None
    reports = [
        _variant_report(config, variant, index, evaluations, dataset.world, auc, recall)
        for index, variant in enumerate(evaluations[0].slates)
    ]
    for report in reports:
        logger.info(f"[{report.variant}] AUC={report.auc} eCTR={report.ectr:.4f} eRPM={report.erpm:.4f} "
                    f"Psi={report.psi} regret={report.mean_regret:.6f}")

    flops = None
    try:
        flops = measure_model_flops(config, model, dataset.test[0])
    except FlopsConfigError as exc:
        logger.warning(f"FLOPs report skipped: {exc}")
    return reports, flops


# ==============================================================================
# Pipeline
# ==============================================================================

def run_experiment(config: RunConfig, out, phases: Sequence[str] = PIPELINE) -> RunReport:
    """
    Run `phases` (a subsequence of pretrain -> reward -> rlaf -> payment -> evaluate)
    and write the RunReport. Missing prerequisite checkpoints are rejected before
    any training starts.
    """
    unknown = [phase for phase in phases if phase not in PIPELINE]
    if unknown:
        raise ValueError(f"unknown phases {unknown}, expected a subset of {PIPELINE}")
    phases = [phase for phase in PIPELINE if phase in phases]
    paths = RunPaths(Path(out))
    training = [phase for phase in phases if phase in PHASES]
    if training:
        done = set()
        for phase in training:
            missing = [p for p in PHASES[:PHASES.index(phase)] if p not in done and not paths.checkpoint(p).is_file()]
            if missing:
                raise MissingCheckpointError(missing[0], paths.checkpoint(missing[0]))
            done.add(phase)

    start = time.perf_counter()
    dataset = prepare(config, out)
    log = MetricsLog.in_directory(paths.out)
    losses: Dict[str, float] = {}
    for phase in training:
        phase_losses = run_phase(config, out, phase, dataset, log)
        if phase_losses:
            losses[phase] = float(phase_losses[-1])

    metrics: List[MetricReport] = []
    flops = None
    if "evaluate" in phases:
        metrics, flops = evaluate(config, out, dataset)

    report = RunReport(
        run_id=config.run_id,
        phase=phases[-1] if len(phases) == 1 else "pipeline",
        seed=config.seed,
        wall_time=time.perf_counter() - start,
        metrics=metrics,
        flops=flops,
        losses=losses,
    )
    write_report(paths.out, report)
    return report


def flops_table(config: RunConfig) -> FlopsReport:
    """FLOPs of one test request through a freshly initialized model; nothing is read or written."""
    world = generate_world(config.world)
    model = EGAModel(config.model, world.schema, world.ads, seed=config.seed, namespace=f"flops-{config.run_id}")
    model.features.publish_users(world.users)
    rng = world.request_rng("test", 0)
    sample = simulate_request(world, int(rng.integers(config.n_users)), rng)
    return measure_model_flops(config, model, sample)
