"""Pipeline stages shared by the CLI and the end-to-end tests.

Every stage reads its inputs from, and writes its outputs to, the run
directory named in the config:

    supernet.ckpt         trained supernet (plus supernet-eNNN.ckpt snapshots)
    convergence.csv       per-epoch training log
    samples.csv           <encoding, measured accuracy> rows
    predictor.ckpt        fitted accuracy predictor
    rank_scatter.csv      holdout predicted vs measured accuracy
    search.csv            GA result for one constraint
    pareto.csv            best configuration per swept constraint
    moments.csv, moments_hist.csv   per-layer weight statistics
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..calibration import CalibrationConfig, bn_calibrate, evaluate
from ..errors import ContractError
from ..predictor import (
    PredictorConfig,
    encode,
    rank_metrics,
    read_samples_csv,
    train_predictor,
    write_samples_csv,
)
from ..search import GAConfig, Genome, SearchConstraint, avg_bitwidth, run_ga, write_search_csv
from ..supernet import (
    ElasticSpace,
    SubnetSpec,
    TrainConfig,
    Trainer,
    build_supernet,
    parse_subnet,
    sample_subnet,
)
from . import reports
from .checkpoint import load_checkpoint, load_predictor, read_checkpoint_meta, save_checkpoint, save_predictor
from .config import ExperimentConfig, parse_config
from .data import Dataset, load_eqds_dataset, make_blobs, split_dataset

# independent random streams per stage
STREAM_TRAIN, STREAM_SAMPLE, STREAM_PREDICTOR, STREAM_SEARCH = 0, 1, 2, 3


def stage_rng(cfg: ExperimentConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    calib: Dataset


def load_data(cfg: ExperimentConfig) -> Splits:
    d = cfg.data
    if d.kind == "blobs":
        ds = make_blobs(d.n_samples, d.n_classes, d.dims, d.seed, d.separation, d.noise, d.clusters_per_class)
    else:
        ds = load_eqds_dataset(d.path, d.labels)
    return Splits(*split_dataset(ds, d.split))


def make_space(cfg: ExperimentConfig) -> ElasticSpace:
    s = cfg.space
    return ElasticSpace(s.weight_bits, s.act_bits, s.symmetries, s.granularities)


def make_net(cfg: ExperimentConfig, rng=None):
    rng = stage_rng(cfg, STREAM_TRAIN) if rng is None else rng
    arch = cfg.arch.layers if cfg.arch.layers else cfg.arch.name
    shape = cfg.arch.input_shape or None
    return build_supernet(arch, make_space(cfg), rng, cfg.arch.quantize_first_last, cfg.space.per_tensor_mode,
                          input_shape=shape)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, weight_decay=t.weight_decay, lam=t.lam,
                       wdr_weight=t.wdr_weight, kurtosis_target=t.kurtosis_target, n_random=t.n_random,
                       guidance=t.guidance, label_smoothing=t.label_smoothing)


def calib_config(cfg: ExperimentConfig) -> CalibrationConfig:
    return CalibrationConfig(cfg.calib.n_batches, cfg.calib.batch_size)


def _reshape(cfg, x):
    shape = cfg.arch.input_shape or None
    if shape is None and not cfg.arch.layers:
        from ..supernet.network import ARCHITECTURES

        shape = ARCHITECTURES[cfg.arch.name]["input_shape"]
    return x.reshape((len(x),) + tuple(shape))


def measure(net, spec, splits: Splits, cfg: ExperimentConfig) -> float:
    cal = bn_calibrate(net, spec, splits.calib.x, calib_config(cfg))
    return evaluate(cal, None, splits.val.x, splits.val.y)


def monitor_specs(net):
    space = net.space
    hi = SubnetSpec.uniform(net.n_layers, space.weight_bits[-1], space.act_bits[-1], space.symmetries[-1],
                            space.granularities[0])
    lo = SubnetSpec.uniform(net.n_layers, space.weight_bits[0], space.act_bits[0], space.symmetries[-1],
                            space.granularities[0])
    return hi, lo


def run_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.run.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def prepare_splits(cfg: ExperimentConfig) -> Splits:
    s = load_data(cfg)
    return Splits(*(Dataset(_reshape(cfg, d.x), d.y) for d in (s.train, s.val, s.calib)))


def train_supernet(cfg: ExperimentConfig, resume=None, until_epoch=None) -> dict:
    """Train (or resume) and write ``supernet.ckpt`` plus ``convergence.csv``."""
    out = run_dir(cfg)
    splits = prepare_splits(cfg)
    rng = stage_rng(cfg, STREAM_TRAIN)
    net = make_net(cfg, rng)
    trainer = Trainer(net, train_config(cfg), rng)
    if resume is not None:
        load_checkpoint(resume, net, trainer)
    else:
        net.init_activation_params(splits.train.x[:256])
    log = reports.CsvLog(out / "convergence.csv", reports.CONVERGENCE_HEADER, fresh=resume is None)
    hi, lo = monitor_specs(net)
    every = cfg.train.checkpoint_every
    total = trainer.total_steps(len(splits.train))

    def on_epoch(epoch, rec):
        from ..diffcore import cosine_lr

        row = dict(rec)
        row.update(epoch=epoch, step=trainer.step, lr=cosine_lr(trainer.step, total, cfg.train.lr))
        row["acc_high"] = measure(net, hi, splits, cfg)
        row["acc_low"] = measure(net, lo, splits, cfg)
        log.append(row)
        if every and epoch % every == 0:
            save_checkpoint(out / f"supernet-e{epoch:03d}.ckpt", net, trainer, cfg.source)

    trainer.fit(splits.train.x, splits.train.y, until_epoch=until_epoch, on_epoch=on_epoch)
    save_checkpoint(out / "supernet.ckpt", net, trainer, cfg.source)
    return {"checkpoint": str(out / "supernet.ckpt"), "epoch": trainer.epoch, "step": trainer.step}


def load_trained(checkpoint, cfg: ExperimentConfig | None = None):
    """Rebuild the supernet described by (or embedded in) ``checkpoint``."""
    if cfg is None:
        meta = read_checkpoint_meta(checkpoint)
        if not meta.get("config"):
            raise ContractError(f"{checkpoint} carries no config; pass --config")
        cfg = parse_config(meta["config"])
    net = make_net(cfg, np.random.default_rng(0))
    load_checkpoint(checkpoint, net)
    return cfg, net


def eval_subnet(checkpoint, spec_text: str, cfg=None) -> dict:
    cfg, net = load_trained(checkpoint, cfg)
    spec = parse_subnet(spec_text, net.n_layers)
    splits = prepare_splits(cfg)
    wa, aa = avg_bitwidth(spec, net.layer_shapes())
    return {"spec": spec.to_string(), "accuracy": measure(net, spec, splits, cfg), "w_avg": wa, "a_avg": aa}


def sample_accuracy(cfg: ExperimentConfig, n: int | None = None, checkpoint=None) -> dict:
    out = run_dir(cfg)
    checkpoint = out / "supernet.ckpt" if checkpoint is None else checkpoint
    cfg_ck, net = load_trained(checkpoint, cfg)
    splits = prepare_splits(cfg)
    n = cfg.predictor.n_samples if n is None else n
    rng = stage_rng(cfg, STREAM_SAMPLE)
    encs, accs = [], []
    for _ in range(n):
        spec = sample_subnet(net.space, net.n_layers, "random", rng)
        encs.append(encode(spec, net.space))
        accs.append(measure(net, spec, splits, cfg))
    write_samples_csv(out / "samples.csv", net.space, net.n_layers, encs, accs)
    return {"samples": str(out / "samples.csv"), "n": n, "mean_accuracy": float(np.mean(accs))}


def predictor_config(cfg: ExperimentConfig) -> PredictorConfig:
    p = cfg.predictor
    return PredictorConfig(hidden=tuple(p.hidden), epochs=p.epochs, lr=p.lr, weight_decay=p.weight_decay,
                           momentum=p.momentum, batch_size=p.batch_size, seed=cfg.seed)


def _space_layers(cfg):
    net = make_net(cfg, np.random.default_rng(0))
    return net.space, net.n_layers, net


def fit_predictor(cfg: ExperimentConfig) -> dict:
    """Fit on all but the last ``predictor.holdout`` samples; score the rest."""
    out = run_dir(cfg)
    space, n_layers, _ = _space_layers(cfg)
    enc, acc = read_samples_csv(out / "samples.csv", space, n_layers)
    h = cfg.predictor.holdout
    if h >= len(acc):
        raise ContractError("holdout leaves no training samples")
    train_x, train_y = enc[: len(acc) - h], acc[: len(acc) - h]
    model = train_predictor(train_x, train_y, predictor_config(cfg))
    metrics = {}
    if h >= 2:
        pred = model.predict_encoded(enc[len(acc) - h:])
        actual = acc[len(acc) - h:]
        metrics["pearson"], metrics["kendall"] = rank_metrics(pred, actual)
        reports.write_rows(out / "rank_scatter.csv", reports.RANK_HEADER,
                           [{"index": i, "predicted": float(p), "measured": float(a)}
                            for i, (p, a) in enumerate(zip(pred, actual))])
    save_predictor(out / "predictor.ckpt", model, space.describe(), n_layers, metrics)
    return {"predictor": str(out / "predictor.ckpt"), "n_train": len(train_y), **metrics}


def ga_config(cfg: ExperimentConfig) -> GAConfig:
    s = cfg.search
    return GAConfig(population_size=s.population, generations=s.generations, mutation_prob=s.mutation_prob,
                    crossover_prob=s.crossover_prob, elite_count=s.elite_count)


def search(cfg: ExperimentConfig, target_w: float, target_a: float, tolerance=None, top: int = 10,
           measure_top: bool = True) -> dict:
    out = run_dir(cfg)
    cfg_ck, net = load_trained(out / "supernet.ckpt", cfg)
    model, _ = load_predictor(out / "predictor.ckpt")
    genome = Genome(net.space, net.layer_shapes(), weighted=cfg.search.weighting == "weighted")
    tol = cfg.search.tolerance if tolerance is None else tolerance
    res = run_ga(model, genome, SearchConstraint(target_w, target_a, tol), ga_config(cfg),
                 stage_rng(cfg, STREAM_SEARCH))
    # unique configurations, best first
    seen, best = set(), []
    for ind in res.population:
        if ind.spec not in seen:
            seen.add(ind.spec)
            best.append(ind)
        if len(best) == top:
            break
    measured = None
    if measure_top:
        splits = prepare_splits(cfg)
        measured = [measure(net, ind.spec, splits, cfg) for ind in best]
    write_search_csv(out / "search.csv", best, measured)
    return {"search": str(out / "search.csv"), "best_predicted": best[0].fitness,
            "best_measured": None if measured is None else measured[0],
            "best_spec": best[0].spec.to_string(), "elite_final": res.elite_trajectory[-1]}


def report(cfg: ExperimentConfig, kind: str) -> dict:
    out = run_dir(cfg)
    if kind == "moments":
        _, net = load_trained(out / "supernet.ckpt", cfg)
        rows = reports.moments_rows(net)
        reports.write_rows(out / "moments.csv", reports.MOMENTS_HEADER, rows)
        reports.write_rows(out / "moments_hist.csv", reports.HISTOGRAM_HEADER, reports.histogram_rows(net))
        return {"report": str(out / "moments.csv"), "layers": len(rows)}
    if kind == "rank-scatter":
        res = fit_predictor(cfg) if not (out / "rank_scatter.csv").exists() else None
        rows = reports.read_rows(out / "rank_scatter.csv")
        pred = [float(r["predicted"]) for r in rows]
        meas = [float(r["measured"]) for r in rows]
        pearson, kendall = rank_metrics(pred, meas)
        return {"report": str(out / "rank_scatter.csv"), "pearson": pearson, "kendall": kendall,
                "refit": res is not None}
    if kind == "convergence":
        rows = reports.read_rows(out / "convergence.csv")
        last = rows[-1]
        return {"report": str(out / "convergence.csv"), "epochs": len(rows),
                "acc_high": float(last["acc_high"]), "acc_low": float(last["acc_low"])}
    if kind == "pareto":
        return pareto(cfg)
    raise ContractError(f"unknown report kind {kind!r}")


def pareto(cfg: ExperimentConfig) -> dict:
    out = run_dir(cfg)
    _, net = load_trained(out / "supernet.ckpt", cfg)
    model, _ = load_predictor(out / "predictor.ckpt")
    shapes = net.layer_shapes()
    genome = Genome(net.space, shapes, weighted=cfg.search.weighting == "weighted")
    splits = prepare_splits(cfg)
    lo = max(net.space.weight_bits[0], net.space.act_bits[0])
    hi = min(net.space.weight_bits[-1], net.space.act_bits[-1])
    rows = []
    for t in cfg.search.pareto_targets:
        if not lo <= t <= hi:
            continue
        c = SearchConstraint(t, t, cfg.search.tolerance)
        res = run_ga(model, genome, c, ga_config(cfg), stage_rng(cfg, STREAM_SEARCH))
        best = res.best
        wa, aa = avg_bitwidth(best.spec, shapes, cfg.search.weighting == "weighted")
        rows.append({"target_w_bits": t, "target_a_bits": t, "tolerance": cfg.search.tolerance, "w_avg": wa,
                     "a_avg": aa, "predicted_accuracy": best.fitness,
                     "measured_accuracy": measure(net, best.spec, splits, cfg), "spec": best.spec.to_string()})
    reports.write_rows(out / "pareto.csv", reports.PARETO_HEADER, rows)
    return {"report": str(out / "pareto.csv"), "points": len(rows)}
