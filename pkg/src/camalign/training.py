"""Teacher-forced training with early stopping and JSONL metric logs.

Each run directory receives the effective config, the vocabulary, per-epoch
metric records, and best/last checkpoints, so an entire run reproduces from
its own artifacts plus the dataset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ContractError, backward
from .checkpoint import save_params
from .config import RunConfig, save_config
from .data import Vocab, build_vocab, detokenize, tokenize
from .decoding import beam_search, greedy_decode
from .losses import LossBreakdown
from .metrics import evaluate_corpus
from .model import CaptionModel, build_model
from .optim import Adam


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainState:
    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = -1
    epochs_since_best: int = 0

    def update(self, metric: float) -> bool:
        """Record a validation result; returns True when it improves."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = self.epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    def should_stop(self, patience: int) -> bool:
        return self.epochs_since_best >= patience


@dataclass
class TrainResult:
    model: CaptionModel
    vocab: Vocab
    state: TrainState
    history: list = field(default_factory=list)
    run_dir: Path = None


def sample_losses(model: CaptionModel, sample, vocab: Vocab, cfg: RunConfig):
    ids = tokenize(sample.report, vocab)
    return model.forward_train(
        sample.images, ids, sample.labels,
        lam=cfg.train.lambda_, delta=cfg.train.delta, k=cfg.vtac.k)


def generate_report(model: CaptionModel, sample, vocab: Vocab, beam: int, max_len: int) -> str:
    step = model.step_fn(sample.images)
    if beam == 1:
        ids = greedy_decode(step, max_len)
    else:
        ids = beam_search(step, beam, max_len)
    return detokenize(ids, vocab)


def evaluate_split(model: CaptionModel, samples, vocab: Vocab, cfg: RunConfig,
                   beam: int = 1):
    """Teacher-forced loss terms plus decoded text metrics on a split."""
    terms = np.zeros(3)
    candidates, references = [], []
    for sample in samples:
        result = sample_losses(model, sample, vocab, cfg)
        terms += (result.breakdown.ce, result.breakdown.bce, result.breakdown.mse)
        candidates.append(generate_report(model, sample, vocab, beam, cfg.decode.max_len))
        references.append([sample.report.lower()])
    terms /= max(1, len(samples))
    breakdown = LossBreakdown(ce=terms[0], bce=terms[1], mse=terms[2],
                              lam=cfg.train.lambda_, delta=cfg.train.delta)
    return breakdown, evaluate_corpus(candidates, references), candidates


def _dump_diverged(run_dir: Path, epoch: int, batch, losses) -> Path:
    path = run_dir / "diverged_batch.json"
    payload = {
        "epoch": epoch,
        "samples": [{"id": s.id, "report": s.report, "labels": [int(y) for y in s.labels]}
                    for s in batch],
        "loss_terms": losses,
    }
    path.write_text(json.dumps(payload, indent=2))
    return path


def _log(fh, record: dict) -> dict:
    fh.write(json.dumps(record) + "\n")
    fh.flush()
    return record


def _val_record(model, val_samples, vocab, cfg, epoch, log_fh) -> dict:
    breakdown, report, _ = evaluate_split(model, val_samples, vocab, cfg, beam=1)
    return _log(log_fh, {"epoch": epoch, "split": "val",
                         **breakdown.as_dict(), **report.as_dict()})


def train(cfg: RunConfig, train_samples, val_samples, run_dir,
          log_fn=None) -> TrainResult:
    """Run the configured variant to early stop or the epoch budget."""
    if not train_samples or not val_samples:
        raise ValueError("empty train or validation split")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.json")

    vocab = build_vocab([s.report for s in train_samples],
                        min_freq=cfg.data.min_freq, max_size=cfg.model.vocab_max)
    (run_dir / "vocab.json").write_text(json.dumps({"id_to_token": vocab.id_to_token}))

    model = build_model(cfg, len(vocab), np.random.default_rng([cfg.train.seed, 0]))
    shuffle_rng = np.random.default_rng([cfg.train.seed, 1])
    opt = Adam([(model.extractor_params(), cfg.train.lr_ve),
                (model.encdec_params(), cfg.train.lr_ed)])

    state = TrainState()
    history = []
    with open(run_dir / "metrics.jsonl", "w") as log_fh:
        history.append(_val_record(model, val_samples, vocab, cfg, 0, log_fh))
        save_params(run_dir / "checkpoint_best.bin", model.params())
        for epoch in range(1, cfg.train.epochs + 1):
            state.epoch = epoch
            order = shuffle_rng.permutation(len(train_samples))
            epoch_terms = np.zeros(4)
            for start in range(0, len(order), cfg.train.batch):
                batch = [train_samples[i] for i in order[start:start + cfg.train.batch]]
                results = []
                try:
                    results = [sample_losses(model, s, vocab, cfg) for s in batch]
                    batch_loss = results[0].total
                    for r in results[1:]:
                        batch_loss = batch_loss + r.total
                    batch_loss = batch_loss * (1.0 / len(batch))
                    if not np.isfinite(batch_loss.data):
                        raise ContractError("non-finite batch loss")
                    opt.zero_grad()
                    backward(batch_loss)
                    opt.step()
                except ContractError as err:
                    losses = [r.breakdown.as_dict() for r in results]
                    path = _dump_diverged(run_dir, epoch, batch, losses)
                    raise TrainingDiverged(f"{err}; offending batch dumped to {path}") from err
                for r in results:
                    b = r.breakdown
                    epoch_terms += (b.ce, b.bce, b.mse, b.total)
            epoch_terms /= len(order)
            history.append(_log(log_fh, {
                "epoch": epoch, "split": "train",
                "ce": epoch_terms[0], "bce": epoch_terms[1],
                "mse": epoch_terms[2], "total": epoch_terms[3]}))
            record = _val_record(model, val_samples, vocab, cfg, epoch, log_fh)
            history.append(record)
            if log_fn:
                log_fn(f"epoch {epoch}: val bleu_4={record['bleu_4']:.4f} "
                       f"ce={record['ce']:.4f} mse={record['mse']:.5f}")
            if state.update(record["bleu_4"]):
                save_params(run_dir / "checkpoint_best.bin", model.params())
            if state.should_stop(cfg.train.patience):
                break
        save_params(run_dir / "checkpoint_last.bin", model.params())
    return TrainResult(model=model, vocab=vocab, state=state,
                       history=history, run_dir=run_dir)
