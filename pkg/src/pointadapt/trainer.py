"""The optimization loop: paired source + unpaired target batches.

One optimizer covers model and discriminators; gradient reversal turns
discriminator minimization into feature confusion, so there is no
alternating update. Every step logs a LossReport line; epoch ends update
the voted-consistency threshold; periodic evaluation on the target eval
split drives best-checkpoint selection. Everything is reproducible from
(config, seed, dataset manifest): batch order derives from (seed, epoch),
inputs are resampled with per-sample stable seeds, checkpoints carry the
complete optimizer and pseudo-label state.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from pointadapt import autodiff as ad
from pointadapt.align import (
    Discriminator,
    eta_schedule,
    loss_domain_token,
    loss_token_wise,
)
from pointadapt.autodiff import grad_reverse
from pointadapt.benchmark import load_split
from pointadapt.errors import ConfigError, NonFiniteLossError
from pointadapt.geometry import chamfer_distance, resample
from pointadapt.heads import completion_loss
from pointadapt.model import CompletionModel, ModelConfig
from pointadapt.vpc import (
    PseudoLabelStore,
    consistency_scores,
    harvest_pseudo_labels,
    pseudo_label_loss,
    update_threshold,
)


@dataclass
class LossWeights:
    """Balancing weights of the alignment and consistency terms."""

    alpha: float = 0.025
    beta: float = 0.25
    gamma: float = 0.01

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class TrainConfig:
    epochs: int = 30
    seed: int = 0
    lr: float = 2e-4
    weight_decay: float = 5e-5
    batch_size: int = 2
    use_dqfa_enc: bool = True
    use_dqfa_dec: bool = True
    use_ptfa_enc: bool = True
    use_ptfa_dec: bool = True
    use_vpc: bool = True
    grl_eta_max: float = 1.0
    grl_warmup_frac: float = 0.2
    vpc_percentile: float = 30.0
    pseudo_weight: float = 0.5
    pseudo_start_epoch: int = 1
    eval_every: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    @property
    def any_alignment(self):
        return (
            self.use_dqfa_enc or self.use_dqfa_dec
            or self.use_ptfa_enc or self.use_ptfa_dec
        )


REPORT_FIELDS = (
    "completion", "enc_q", "dec_q", "enc_k", "dec_k", "cons", "pseudo", "total",
)


@dataclass
class LossReport:
    completion: float = 0.0
    enc_q: float = 0.0
    dec_q: float = 0.0
    enc_k: float = 0.0
    dec_k: float = 0.0
    cons: float = 0.0
    pseudo: float = 0.0
    total: float = 0.0

    def as_line(self):
        return "\t".join(f"{getattr(self, k):.17g}" for k in REPORT_FIELDS)

    @staticmethod
    def header():
        return "\t".join(REPORT_FIELDS)


class AdamW:
    """Adam with decoupled weight decay over a name -> Tensor dict.

    Parameters whose gradient is None are skipped entirely (no moment
    update, no decay), so unused parts of the model stay bitwise frozen.
    """

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self):
        b1, b2 = self.betas
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            t = self.t.get(name, 0) + 1
            self.t[name] = t
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.value = p.value - self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.value
            )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        state = {}
        for name in self.m:
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
            state[f"t/{name}"] = np.array(self.t[name])
        return state

    def load_state_dict(self, state):
        self.m, self.v, self.t = {}, {}, {}
        for key, value in state.items():
            kind, name = key.split("/", 1)
            if kind == "m":
                self.m[name] = np.asarray(value, dtype=np.float64)
            elif kind == "v":
                self.v[name] = np.asarray(value, dtype=np.float64)
            elif kind == "t":
                self.t[name] = int(value)


@dataclass
class Batch:
    ids: list
    inputs: np.ndarray           # (B, n_input, 3)
    lam: np.ndarray              # (B,)
    gts: np.ndarray | None       # (B, m, 3) for source batches


@dataclass
class VpcState:
    store: PseudoLabelStore = field(default_factory=PseudoLabelStore)
    window: list = field(default_factory=list)
    tau: float | None = None


def make_discriminators(dim, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD15C]))
    return {
        identity: Discriminator(dim, rng, identity=identity)
        for identity in ("enc_q", "dec_q", "enc_k", "dec_k")
    }


def collect_params(model, discs):
    out = dict(model.params())
    for identity, disc in discs.items():
        out.update({f"disc.{k}": v for k, v in disc.params().items()})
    return out


def _stable_seed(sample_id):
    return zlib.crc32(sample_id.encode("utf-8"))


def prepare_inputs(sample_set, n_input):
    """Resample every partial to the model resolution, deterministically."""
    return np.stack(
        [
            resample(p, n_input, seed=_stable_seed(sid))
            for p, sid in zip(sample_set.partials, sample_set.ids)
        ]
    )


def _epoch_order(n, seed, epoch, salt):
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, salt]))
    return rng.permutation(n)


def _aligned_pair(out_s, out_t, pick):
    return ad.concat([pick(out_s), pick(out_t)], axis=0)


def train_step(model, discs, optimizer, src, tgt, cfg, eta, vstate=None, epoch=0):
    """One optimizer update over a source/target batch pair.

    Raises NonFiniteLossError (before any update) if a term goes NaN/Inf.
    """
    w = cfg.weights
    out_s = model(src.inputs)
    # a pure source-only configuration never consumes the target forward
    need_target = cfg.any_alignment or cfg.use_vpc
    out_t = model(tgt.inputs) if need_target else None
    lam = np.concatenate([src.lam, tgt.lam]) if need_target else None

    terms = {name: ad.Tensor(0.0) for name in REPORT_FIELDS[:-1]}
    terms["completion"] = completion_loss(out_s.pred, src.gts)

    if cfg.use_dqfa_enc:
        feats = _aligned_pair(out_s, out_t, lambda o: o.enc.proxy_out)
        terms["enc_q"] = loss_domain_token(discs["enc_q"], grad_reverse(feats, eta), lam)
    if cfg.use_dqfa_dec:
        feats = _aligned_pair(out_s, out_t, lambda o: o.dec.query_out)
        terms["dec_q"] = loss_domain_token(discs["dec_q"], grad_reverse(feats, eta), lam)
    if cfg.use_ptfa_enc:
        feats = _aligned_pair(out_s, out_t, lambda o: o.enc.token_out)
        terms["enc_k"] = loss_token_wise(discs["enc_k"], grad_reverse(feats, eta), lam)
    if cfg.use_ptfa_dec:
        feats = _aligned_pair(out_s, out_t, lambda o: o.dec.dynamic_out[-1])
        terms["dec_k"] = loss_token_wise(discs["dec_k"], grad_reverse(feats, eta), lam)

    if cfg.use_vpc:
        scores_s = consistency_scores(out_s.pred)
        scores_t = consistency_scores(out_t.pred)
        terms["cons"] = ad.mean_(ad.concat([scores_s, scores_t], axis=0))
        if epoch >= cfg.pseudo_start_epoch and vstate is not None:
            terms["pseudo"] = pseudo_label_loss(tgt.ids, out_t.pred.final, vstate.store)

    total = terms["completion"]
    total = ad.add(total, ad.mul(ad.add(terms["enc_q"], terms["dec_q"]), w.alpha))
    total = ad.add(total, ad.mul(ad.add(terms["enc_k"], terms["dec_k"]), w.beta))
    total = ad.add(total, ad.mul(terms["cons"], w.gamma))
    total = ad.add(total, ad.mul(terms["pseudo"], cfg.pseudo_weight))

    values = {name: t.item() for name, t in terms.items()}
    values["total"] = total.item()
    for name, value in values.items():
        if not np.isfinite(value):
            raise NonFiniteLossError(name, value)

    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    optimizer.zero_grad()

    # voted-consistency bookkeeping happens on detached values
    if cfg.use_vpc and vstate is not None:
        score_values = scores_t.value
        vstate.window.extend(float(s) for s in score_values)
        if vstate.tau is not None:
            harvest_pseudo_labels(
                tgt.ids, score_values, out_t.pred.final.value,
                vstate.tau, vstate.store, epoch=epoch,
            )

    return LossReport(**values)


def evaluate_mean_cd(model, eval_inputs, eval_completes, batch=16):
    """Mean Chamfer distance of completions over an eval split (raw units)."""
    values = []
    for start in range(0, len(eval_inputs), batch):
        finals = model.complete(eval_inputs[start:start + batch])
        for pred, gt in zip(finals, eval_completes[start:start + batch]):
            values.append(chamfer_distance(pred, gt).raw)
    return float(np.mean(values))


# -- checkpointing -------------------------------------------------------------


def save_checkpoint(path, model, discs, optimizer, cfg, vstate, epoch, global_step,
                    best_cd=None):
    arrays = {}
    for name, value in model.state_dict().items():
        arrays[f"model/{name}"] = value
    for identity, disc in discs.items():
        for name, p in disc.params().items():
            arrays[f"disc/{name}"] = p.value.copy()
    for name, value in optimizer.state_dict().items():
        arrays[f"opt/{name}"] = value
    ids = list(vstate.store.entries)
    if ids:
        arrays["pseudo/clouds"] = np.stack([vstate.store.entries[i].cloud for i in ids])
        arrays["pseudo/scores"] = np.array([vstate.store.entries[i].score for i in ids])
        arrays["pseudo/epochs"] = np.array([vstate.store.entries[i].epoch for i in ids])
    meta = {
        "config": config_to_flat(cfg),
        "epoch": epoch,
        "global_step": global_step,
        "tau": vstate.tau,
        "window": vstate.window,
        "pseudo_ids": ids,
        "best_cd": best_cd,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Load a checkpoint into (model, discs, optimizer, cfg, vstate, meta)."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays.pop("meta")).decode("utf-8"))
    cfg = config_from_flat(meta["config"])
    model = CompletionModel(cfg.model, seed=cfg.seed)
    model.load_state_dict(
        {k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")}
    )
    discs = make_discriminators(cfg.model.embed_dim, cfg.seed)
    disc_params = {
        k[len("disc/"):]: v for k, v in arrays.items() if k.startswith("disc/")
    }
    for identity, disc in discs.items():
        for name, p in disc.params().items():
            p.value = np.asarray(disc_params[name], dtype=np.float64).copy()
    optimizer = AdamW(
        collect_params(model, discs), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    optimizer.load_state_dict(
        {k[len("opt/"):]: v for k, v in arrays.items() if k.startswith("opt/")}
    )
    vstate = VpcState()
    vstate.tau = meta["tau"]
    vstate.window = list(meta["window"])
    for i, sample_id in enumerate(meta["pseudo_ids"]):
        from pointadapt.vpc import PseudoLabelEntry

        vstate.store.entries[sample_id] = PseudoLabelEntry(
            cloud=np.asarray(arrays["pseudo/clouds"][i], dtype=np.float64),
            score=float(arrays["pseudo/scores"][i]),
            epoch=int(arrays["pseudo/epochs"][i]),
        )
    return model, discs, optimizer, cfg, vstate, meta


# -- flat config (the documented key-value schema) ------------------------------


def config_to_flat(cfg):
    flat = {}
    for f in fields(TrainConfig):
        if f.name in ("weights", "model"):
            continue
        flat[f.name] = getattr(cfg, f.name)
    flat.update(asdict(cfg.weights))
    flat.update(asdict(cfg.model))
    return flat


def config_from_flat(flat):
    flat = dict(flat)
    weight_keys = {f.name for f in fields(LossWeights)}
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)} - {"weights", "model"}
    unknown = set(flat) - weight_keys - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    weights = LossWeights(**{k: flat[k] for k in weight_keys if k in flat})
    model = ModelConfig(**{k: flat[k] for k in model_keys if k in flat})
    train = {k: flat[k] for k in train_keys if k in flat}
    return TrainConfig(weights=weights, model=model, **train)


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_flat(json.load(fh))


def save_config_file(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_flat(cfg), fh, indent=1, sort_keys=True)


# -- the full loop ---------------------------------------------------------------


def train(data_dir, out_dir, cfg, resume=None, quiet=True, stop_after=None):
    """Train on a benchmark directory; returns a summary dict.

    ``stop_after`` ends the run early (after that many epochs) without
    changing the schedule, so a later ``resume`` continues the identical
    trajectory; ``resume`` restores the full state from a checkpoint and
    ignores the passed ``cfg``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    source = load_split(data_dir, "source_train")
    target = load_split(data_dir, "target_train")
    eval_split = load_split(data_dir, "target_eval")
    n_input = cfg.model.n_input
    src_inputs = prepare_inputs(source, n_input)
    tgt_inputs = prepare_inputs(target, n_input)
    eval_inputs = prepare_inputs(eval_split, n_input)
    src_gts = np.stack(source.completes)

    if resume is not None:
        model, discs, optimizer, cfg, vstate, meta = load_checkpoint(resume)
        start_epoch = meta["epoch"] + 1
        global_step = meta["global_step"]
        best_cd = meta["best_cd"]
        log_mode = "a"
    else:
        model = CompletionModel(cfg.model, seed=cfg.seed)
        discs = make_discriminators(cfg.model.embed_dim, cfg.seed)
        optimizer = AdamW(
            collect_params(model, discs), lr=cfg.lr, weight_decay=cfg.weight_decay
        )
        vstate = VpcState()
        start_epoch = 0
        global_step = 0
        best_cd = None
        log_mode = "w"

    save_config_file(cfg, out / "config.json")
    b = cfg.batch_size
    steps_per_epoch = int(np.ceil(len(source) / b))
    total_steps = steps_per_epoch * cfg.epochs
    nan_streak = 0

    train_log = open(out / "train_log.tsv", log_mode, encoding="ascii")
    eval_log = open(out / "eval_log.tsv", log_mode, encoding="ascii")
    if log_mode == "w":
        train_log.write("step\tepoch\teta\t" + LossReport.header() + "\n")
        eval_log.write("epoch\tstep\ttarget_cd\n")

    def run_eval(epoch):
        nonlocal best_cd
        cd = evaluate_mean_cd(model, eval_inputs, eval_split.completes)
        eval_log.write(f"{epoch}\t{global_step}\t{cd:.17g}\n")
        eval_log.flush()
        if best_cd is None or cd < best_cd:
            best_cd = cd
            save_checkpoint(
                out / "checkpoint_best.npz", model, discs, optimizer, cfg,
                vstate, epoch, global_step, best_cd,
            )
        return cd

    final_cd = None
    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    try:
        for epoch in range(start_epoch, end_epoch):
            src_order = _epoch_order(len(source), cfg.seed, epoch, salt=1)
            tgt_order = _epoch_order(len(target), cfg.seed, epoch, salt=2)
            # round-robin the target split to match the source batch count
            need = steps_per_epoch * b
            tgt_order = np.resize(tgt_order, need)
            for step in range(steps_per_epoch):
                src_idx = src_order[step * b:(step + 1) * b]
                tgt_idx = tgt_order[step * b:(step + 1) * b]
                src_batch = Batch(
                    ids=[source.ids[i] for i in src_idx],
                    inputs=src_inputs[src_idx],
                    lam=np.zeros(len(src_idx)),
                    gts=src_gts[src_idx],
                )
                tgt_batch = Batch(
                    ids=[target.ids[i] for i in tgt_idx],
                    inputs=tgt_inputs[tgt_idx],
                    lam=np.ones(len(tgt_idx)),
                    gts=None,
                )
                eta = (
                    eta_schedule(global_step, total_steps, cfg.grl_eta_max,
                                 cfg.grl_warmup_frac)
                    if cfg.any_alignment else 0.0
                )
                try:
                    report = train_step(
                        model, discs, optimizer, src_batch, tgt_batch, cfg,
                        eta, vstate, epoch,
                    )
                    nan_streak = 0
                    train_log.write(
                        f"{global_step}\t{epoch}\t{eta:.17g}\t{report.as_line()}\n"
                    )
                except NonFiniteLossError as err:
                    nan_streak += 1
                    train_log.write(f"# step {global_step} aborted: {err}\n")
                    if nan_streak > 5:
                        raise
                global_step += 1
            train_log.flush()

            if cfg.use_vpc and vstate.window:
                vstate.tau = update_threshold(vstate.window, cfg.vpc_percentile)
                vstate.window = []

            last_epoch = epoch == cfg.epochs - 1
            if last_epoch or (epoch + 1) % cfg.eval_every == 0:
                cd = run_eval(epoch)
                if last_epoch:
                    final_cd = cd
                if not quiet:
                    print(f"epoch {epoch}: target CD {cd:.6f} (best {best_cd:.6f})")
            save_checkpoint(
                out / "checkpoint_last.npz", model, discs, optimizer, cfg,
                vstate, epoch, global_step, best_cd,
            )
    finally:
        train_log.close()
        eval_log.close()

    return {
        "best_cd": best_cd,
        "final_cd": final_cd,
        "epochs": cfg.epochs,
        "steps": global_step,
        "pseudo_labels": len(vstate.store),
        "out_dir": str(out),
    }
