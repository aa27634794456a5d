"""Training loops (graph-generative scheme and baseline-only), evaluation, sweeps."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import numerics as nx
from .concepts import ConceptVocabulary, gt_relations
from .dataset import DatasetConfig, Metrics, SyntheticSplit, compute_metrics, with_gap
from .encoder import EncoderLayout, GcnEncoder
from .errors import ConfigError, NumericError
from .nggm import init_ninit_params, n_gen, n_init, nggm_losses
from .rggm import (LossBreakdown, loss_grad_consistency, loss_kl_symmetric, num_pairs, r_gen,
                   r_init, weighted_total)
from .toy_vqa import Batch, VqaExample, bce_loss, init_vqa_params, one_hot, vqa_c_forward, vqa_r_forward

log = logging.getLogger(__name__)

# substreams under the training seed
VQA_INIT, ENC_INIT, RINIT_INIT, NINIT_INIT = 10, 11, 12, 13
SHUFFLE, BRANCH, NOISE, EVAL_NOISE = 20, 21, 22, 30

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class TrainConfig:
    eta: float = 0.8
    sigma: float = 1.0
    N_k: int = 2
    N_l: int = 2
    N_o: int = 8
    d: int = 16
    embed_dim: int = 16
    embed_seed: int = 0
    alpha_r: float = 6.0
    beta_r: float = 72.0
    alpha_n: float = 6.6
    beta_n: float = 0.17
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    mode: str = "xggm"
    score_mode: str = "corrected"
    tie_assembly: bool = False
    separate_encoders: bool = False
    node_bias: bool = True
    kl_bins: int = 16
    kl_eps: float = 1e-3
    kl_tau: float = 0.01
    var_floor: float = 1e-6
    feature_noise: float = 0.3
    eval_readout: str = "none"
    schedule: str = "xggm_only"

    def validate(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must be in [0, 1], got {self.eta}")
        if self.lr <= 0 or self.sigma < 0 or self.feature_noise < 0:
            raise ConfigError("lr must be > 0; sigma and feature_noise >= 0")
        if self.mode not in ("xggm", "baseline"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.score_mode not in ("squared", "corrected"):
            raise ConfigError(f"unknown score_mode {self.score_mode!r}")
        if self.schedule not in ("joint", "xggm_only"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.eval_readout not in ("none", "r", "n"):
            raise ConfigError(f"unknown eval_readout {self.eval_readout!r}")
        if min(self.N_k, self.N_o - 1, self.d, self.batch_size, self.epochs, self.kl_bins - 1) < 1:
            raise ConfigError("N_k, d, batch_size, epochs >= 1; N_o, kl_bins >= 2")
        if self.N_l < 0 or self.kl_eps <= 0 or self.kl_tau <= 0 or self.var_floor <= 0:
            raise ConfigError("N_l >= 0; kl_eps, kl_tau, var_floor > 0")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def vocabulary_for(cfg: TrainConfig, data_cfg: DatasetConfig) -> ConceptVocabulary:
    if data_cfg.N_o != cfg.N_o:
        raise ConfigError(f"dataset has N_o={data_cfg.N_o}, training config N_o={cfg.N_o}")
    return ConceptVocabulary(data_cfg.num_classes, data_cfg.num_attributes, cfg.embed_dim, cfg.embed_seed)


def encoder_layouts(cfg: TrainConfig) -> dict[str, EncoderLayout]:
    def layout(prefix):
        return EncoderLayout(cfg.N_o, cfg.d, cfg.N_k, cfg.N_l, cfg.tie_assembly, prefix)

    if cfg.separate_encoders:
        return {"R": layout("enc_r"), "N": layout("enc_n")}
    shared = layout("enc")
    return {"R": shared, "N": shared}


def init_params(cfg: TrainConfig, vocab: ConceptVocabulary) -> dict[str, np.ndarray]:
    s = cfg.seed
    params = init_vqa_params(nx.RngState(s, VQA_INIT), cfg.embed_dim, cfg.d, vocab.num_attributes)
    for i, lay in enumerate(dict.fromkeys(encoder_layouts(cfg).values())):
        params.update(lay.init(nx.RngState(s, ENC_INIT).child(i)))
    gen = nx.RngState(s, RINIT_INIT).generator()
    params["rinit.W"] = gen.standard_normal((num_pairs(cfg.N_o), cfg.d)) / np.sqrt(cfg.d)
    params["rinit.b"] = np.zeros(num_pairs(cfg.N_o))
    params.update(init_ninit_params(nx.RngState(s, NINIT_INIT), cfg.N_o, cfg.d))
    return params


@dataclass
class TrainState:
    cfg: TrainConfig
    vocab: ConceptVocabulary
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)
    step: int = 0
    shuffle_gen: np.random.Generator = None
    branch_gen: np.random.Generator = None
    noise_gen: np.random.Generator = None


def init_state(cfg: TrainConfig, vocab: ConceptVocabulary) -> TrainState:
    cfg.validate()
    params = init_params(cfg, vocab)
    return TrainState(
        cfg=cfg, vocab=vocab, params=params,
        adam_m={k: np.zeros_like(v) for k, v in params.items()},
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
        adam_t={k: 0 for k in params},
        shuffle_gen=nx.RngState(cfg.seed, SHUFFLE).generator(),
        branch_gen=nx.RngState(cfg.seed, BRANCH).generator(),
        noise_gen=nx.RngState(cfg.seed, NOISE).generator(),
    )


def choose_branch(gen: np.random.Generator, eta: float) -> str:
    """Relation branch iff ``cond < eta`` for ``cond ~ U[0, 1)``."""
    return "R" if gen.random() < eta else "N"


def adam_update(state: TrainState, grads: dict[str, np.ndarray], names, lr: float) -> None:
    for name in sorted(names):
        g = grads[name]
        t = state.adam_t[name] + 1
        m = ADAM_B1 * state.adam_m[name] + (1 - ADAM_B1) * g
        v = ADAM_B2 * state.adam_v[name] + (1 - ADAM_B2) * g * g
        m_hat = m / (1 - ADAM_B1**t)
        v_hat = v / (1 - ADAM_B2**t)
        state.params[name] = state.params[name] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        state.adam_m[name], state.adam_v[name], state.adam_t[name] = m, v, t


# ---------------------------------------------------------------------------
# forward passes shared by training, gradient checks and heat maps


def relation_branch(P, batch: Batch, cfg: TrainConfig, vocab: ConceptVocabulary, noise_rng,
                    sigma: float | None = None):
    """Full relation-branch loss.  Returns (total, breakdown, extras)."""
    sigma = cfg.sigma if sigma is None else sigma
    layout = encoder_layouts(cfg)["R"]
    x, O = vqa_r_forward(P, batch, vocab, noise_rng, cfg.feature_noise)
    R_gt = gt_relations(batch.classes, batch.attributes, vocab)
    init = r_init(x, P["rinit.W"], P["rinit.b"], sigma, noise_rng, cfg.N_o)
    R_g, trace = r_gen(GcnEncoder(P, layout), O, init.R0)
    logits = vqa_c_forward(P, x, trace.readouts[-1])
    l_bce = bce_loss(logits, one_hot(batch.answers, vocab.num_attributes))
    score_sigma = sigma if sigma > 0 else 1.0
    l_grad = loss_grad_consistency(R_g, init.r_hat, init.r, score_sigma, cfg.score_mode, cfg.var_floor)
    l_dist = loss_kl_symmetric(nx.pack_upper(R_g), nx.pack_upper(R_gt), cfg.kl_bins, cfg.kl_eps,
                               soft=True, tau=cfg.kl_tau)
    total = weighted_total(l_grad, l_dist, l_bce, cfg.alpha_r, cfg.beta_r)
    g, dd, b = (float(nx.value(v)) for v in (l_grad, l_dist, l_bce))
    breakdown = LossBreakdown(g, dd, b, float(nx.value(total)), "R")
    return total, breakdown, {"x": x, "O": O, "R_gt": R_gt, "R_g": R_g, "R0": init.R0, "trace": trace, "logits": logits}


def node_branch(P, batch: Batch, cfg: TrainConfig, vocab: ConceptVocabulary, noise_rng,
                sigma: float | None = None):
    sigma = cfg.sigma if sigma is None else sigma
    layout = encoder_layouts(cfg)["N"]
    x, O = vqa_r_forward(P, batch, vocab, noise_rng, cfg.feature_noise)
    R_gt = gt_relations(batch.classes, batch.attributes, vocab)
    init = n_init(x, P, sigma, noise_rng, cfg.N_o, node_bias=cfg.node_bias)
    V_g, trace = n_gen(GcnEncoder(P, layout), init.V_hat_x, R_gt)
    logits = vqa_c_forward(P, x, trace.readouts[-1])
    l_bce = bce_loss(logits, one_hot(batch.answers, vocab.num_attributes))
    score_sigma = sigma if sigma > 0 else 1.0
    total, breakdown = nggm_losses(V_g, init.V_hat_x, init.V_x, O, score_sigma, cfg.score_mode,
                                   cfg.alpha_n, cfg.beta_n, l_bce, cfg.var_floor)
    return total, breakdown, {"x": x, "O": O, "R_gt": R_gt, "V_g": V_g, "trace": trace, "logits": logits}


def baseline_loss(P, batch: Batch, cfg: TrainConfig, vocab: ConceptVocabulary, noise_rng):
    x, _ = vqa_r_forward(P, batch, vocab, noise_rng, cfg.feature_noise)
    l_bce = bce_loss(vqa_c_forward(P, x), one_hot(batch.answers, vocab.num_attributes))
    b = float(nx.value(l_bce))
    return l_bce, LossBreakdown(0.0, 0.0, b, b, "BMU")


# ---------------------------------------------------------------------------
# steps


def _apply(state: TrainState, tape: nx.Tape, total, breakdown: LossBreakdown, only=None):
    if not np.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss at step {state.step}: {breakdown}")
    grads, reached = tape.gradients(total)
    if only is not None:
        reached = {n for n in reached if only(n)}
    for name in reached:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for {name} at step {state.step}: {breakdown}")
    adam_update(state, grads, reached, state.cfg.lr)
    state.step += 1


def train_step_xggm(state: TrainState, batch: Batch, cfg: TrainConfig | None = None):
    """One scheme step: draw the branch, run it, take one optimizer step."""
    cfg = cfg or state.cfg
    branch = choose_branch(state.branch_gen, cfg.eta)
    tape = nx.Tape()
    P = tape.params_from(state.params)
    fwd = relation_branch if branch == "R" else node_branch
    total, breakdown, extras = fwd(P, batch, cfg, state.vocab, state.noise_gen)
    if cfg.schedule == "joint":
        l_bmu = bce_loss(vqa_c_forward(P, extras["x"]), one_hot(batch.answers, state.vocab.num_attributes))
        total = total + l_bmu
        breakdown = LossBreakdown(breakdown.l_grad, breakdown.l_dist, breakdown.l_bce,
                                  float(nx.value(total)), breakdown.branch)
    _apply(state, tape, total, breakdown)
    return state, breakdown


def train_step_baseline(state: TrainState, batch: Batch, cfg: TrainConfig | None = None):
    """BCE-only update of the VQA parameters; graph modules are untouched."""
    cfg = cfg or state.cfg
    tape = nx.Tape()
    P = tape.params_from(state.params)
    total, breakdown = baseline_loss(P, batch, cfg, state.vocab, state.noise_gen)
    _apply(state, tape, total, breakdown, only=lambda n: n.startswith("vqa."))
    return state, breakdown


def iterate_batches(examples: Sequence[VqaExample], batch_size: int, gen: np.random.Generator):
    order = gen.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield Batch.from_examples([examples[i] for i in order[start:start + batch_size]])


def train(cfg: TrainConfig, train_examples: Sequence[VqaExample], vocab: ConceptVocabulary,
          max_steps: int | None = None):
    """Run the configured loop; returns the final state and the per-step loss rows."""
    state = init_state(cfg, vocab)
    step_fn = train_step_xggm if cfg.mode == "xggm" else train_step_baseline
    rows: list[LossBreakdown] = []
    for _ in range(cfg.epochs):
        for batch in iterate_batches(train_examples, cfg.batch_size, state.shuffle_gen):
            _, bd = step_fn(state, batch, cfg)
            rows.append(bd)
            if max_steps is not None and len(rows) >= max_steps:
                return state, rows
    return state, rows


# ---------------------------------------------------------------------------
# evaluation


def predict_examples(state: TrainState, examples: Sequence[VqaExample], chunk: int = 256) -> np.ndarray:
    """Arg-max answers; feature noise comes from a fixed evaluation stream."""
    cfg = state.cfg
    gen = nx.RngState(cfg.seed, EVAL_NOISE).generator()
    out = []
    for start in range(0, len(examples), chunk):
        batch = Batch.from_examples(examples[start:start + chunk])
        if cfg.eval_readout == "r":
            _, _, ex = relation_branch(state.params, batch, cfg, state.vocab, gen, sigma=0.0)
            logits = ex["logits"]
        elif cfg.eval_readout == "n":
            _, _, ex = node_branch(state.params, batch, cfg, state.vocab, gen, sigma=0.0)
            logits = ex["logits"]
        else:
            x, _ = vqa_r_forward(state.params, batch, state.vocab, gen, cfg.feature_noise)
            logits = vqa_c_forward(state.params, x)
        out.append(np.argmax(logits, axis=-1))
    return np.concatenate(out)


def evaluate(state: TrainState, split: SyntheticSplit, tail_quantile: float = 0.2) -> dict[str, Metrics]:
    id_m = compute_metrics(predict_examples(state, split.id_test), split.id_test,
                           split.composition_freq, tail_quantile)
    ood_m = compute_metrics(predict_examples(state, split.ood_test), split.ood_test,
                            split.composition_freq, tail_quantile)
    with_gap(id_m, ood_m)
    return {"id": id_m, "ood": ood_m}


def _summary(values: list[float | None]) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None}
    arr = np.array(vals, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def aggregate(per_seed: list[dict]) -> dict:
    out = {}
    for part in ("id", "ood"):
        out[part] = {f: _summary([r[part][f] for r in per_seed])
                     for f in ("all", "tail", "head", "delta")}
    out["gap"] = _summary([r["gap"] for r in per_seed])
    return out


def run_experiment(cfg: TrainConfig, split: SyntheticSplit, data_cfg: DatasetConfig,
                   seeds: Sequence[int] | None = None):
    """Train once per seed on the shared split, evaluate ID and OOD, aggregate."""
    cfg.validate()
    vocab = vocabulary_for(cfg, data_cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    per_seed, loss_rows, states = [], {}, {}
    for seed in seeds:
        run_cfg = TrainConfig(**{**asdict(cfg), "seed": seed})
        state, rows = train(run_cfg, split.train, vocab)
        m = evaluate(state, split, data_cfg.tail_quantile)
        per_seed.append({"seed": seed, "id": m["id"].to_dict(), "ood": m["ood"].to_dict(),
                         "gap": m["id"].gap})
        loss_rows[seed], states[seed] = rows, state
        log.info("seed %d mode %s: id %.2f ood %.2f", seed, cfg.mode, m["id"].all, m["ood"].all)
    report = {"config": asdict(cfg), "dataset": asdict(data_cfg), "seeds": seeds,
              "per_seed": per_seed, "aggregate": aggregate(per_seed)}
    return report, loss_rows, states


DEFAULT_ETAS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def run_sweep(cfg: TrainConfig, split: SyntheticSplit, data_cfg: DatasetConfig,
              etas: Sequence[float] = DEFAULT_ETAS, seed: int | None = None):
    """Re-train the scheme for each eta on one seed; rows plus mean and std."""
    seed = cfg.seed if seed is None else seed
    rows = []
    for eta in etas:
        run_cfg = TrainConfig(**{**asdict(cfg), "eta": float(eta), "mode": "xggm"})
        report, _, _ = run_experiment(run_cfg, split, data_cfg, [seed])
        r = report["per_seed"][0]
        rows.append({"eta": float(eta), "id": r["id"], "ood": r["ood"], "gap": r["gap"]})
    ood = [r["ood"]["all"] for r in rows]
    return {"config": asdict(cfg), "seed": seed, "rows": rows,
            "ood_all": {"mean": float(np.mean(ood)), "std": float(np.std(ood))}}
