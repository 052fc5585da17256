"""Synthetic shapes task and the progressive two-stage training schedule.

Stage 1 trains only the adaptor against a frozen encoder and language model.
Stage 2 additionally unfreezes the language model and the encoder's final
block. The language model is first pretrained on captions alone so that it
plays the part of a pretrained LLM.
"""

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DivergenceError, LengthError, NumericError
from .frontend import Image, StubPatchEncoder
from .lm import ToyLm, ToyLmConfig, Vocab, caption_logits, clm_loss
from .metrics import tokenize
from .nta import NtaConfig, init_nta_params, nta_forward
from .tensor import SplitMix64, Tensor, backward, no_grad, pixel_shuffle_s2d, reshape, scale

COLORS = {"red": (220, 40, 40), "green": (40, 200, 60), "blue": (50, 80, 230), "yellow": (230, 220, 40)}
SHAPES = ("circle", "square", "triangle")
QUADRANTS = ("top left", "top right", "bottom left", "bottom right")


# ---------------------------------------------------------------- synthetic data


def _draw(pixels, shape, color, x0, y0, size):
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    if shape == "circle":
        inside = (yy - c) ** 2 + (xx - c) ** 2 <= (0.4 * size) ** 2
    elif shape == "square":
        m = size // 5
        inside = (yy >= m) & (yy < size - m) & (xx >= m) & (xx < size - m)
    else:
        m = size // 8
        inside = (yy >= m) & (yy < size - m) & (np.abs(xx - c) <= (yy - m) / 2.0)
    region = pixels[y0:y0 + size, x0:x0 + size]
    region[inside] = color


def render_scene(objects, image_size=32):
    """Dark background with one shape per listed (shape, color, quadrant)."""
    pixels = np.full((image_size, image_size, 3), 25, dtype=np.uint8)
    half = image_size // 2
    for shape, color, quadrant in objects:
        q = QUADRANTS.index(quadrant)
        _draw(pixels, shape, COLORS[color], (q % 2) * half, (q // 2) * half, half)
    return Image(pixels)


def describe_scene(objects):
    parts = [f"a {color} {shape} in the {quadrant}" for shape, color, quadrant in objects]
    return " and ".join(parts) + " ."


def make_shapes_dataset(n_pairs, seed=0, image_size=32, objects_per_image=2):
    """Seeded (image, caption) pairs with distinct captions.

    Objects are listed in quadrant order, so each caption is a function of
    its image.
    """
    rng = SplitMix64(seed)
    seen, out = set(), []
    colors = sorted(COLORS)
    while len(out) < n_pairs:
        quads = sorted(rng.permutation(4)[:objects_per_image])
        objects = tuple((rng.choice(SHAPES), rng.choice(colors), QUADRANTS[q]) for q in quads)
        caption = describe_scene(objects)
        if caption in seen:
            continue
        seen.add(caption)
        out.append((render_scene(objects, image_size), caption))
    return out


# ---------------------------------------------------------------- pipeline


@dataclass
class PipelineConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 8
    shuffle_rate: int = 2
    nta: NtaConfig = field(default_factory=lambda: NtaConfig(
        dim_d=32, pooled_h=2, pooled_w=2, heads=2, dim_lang=32))
    lm: ToyLmConfig = field(default_factory=lambda: ToyLmConfig(d_model=32, layers=2, heads=2, max_seq_len=48))


class ToyPipeline:
    """Stub encoder -> pixel shuffle -> NTA -> toy LM."""

    def __init__(self, config, vocab, seed=0):
        self.config = config
        self.vocab = vocab
        lm_cfg = replace(config.lm, vocab_size=len(vocab))
        self.encoder = StubPatchEncoder(config.patch_size, config.embed_dim, seed)
        self.nta_params = init_nta_params(config.nta, seed + 1)
        self.lm = ToyLm(lm_cfg, seed + 2)
        for t in self.encoder.params("all").values():
            t.requires_grad = True

    def groups(self):
        return {
            "encoder_embed": self.encoder.params("embed"),
            "encoder_final": self.encoder.params("final"),
            "nta": self.nta_params.tensors(),
            "lm": self.lm.tensors(),
        }

    def visual_tokens(self, emb, grid_h, grid_w, training=False):
        x = self.encoder.final_block(emb)
        x = pixel_shuffle_s2d(reshape(x, (grid_h, grid_w, self.config.embed_dim)), self.config.shuffle_rate)
        return nta_forward(x, self.nta_params, self.config.nta, training)

    def logits(self, sample, training=False):
        vis = self.visual_tokens(sample.embedding, sample.grid_h, sample.grid_w, training)
        return caption_logits(self.lm, vis, sample.input_ids)


@dataclass
class Sample:
    embedding: Tensor
    grid_h: int
    grid_w: int
    input_ids: list
    target_ids: list


def prepare_samples(pipeline, pairs):
    """Run the frozen patch embedding once and encode captions."""
    out = []
    v = pipeline.vocab
    for image, caption in pairs:
        emb, gh, gw = pipeline.encoder.embed(image)
        ids = v.encode(tokenize(caption))
        out.append(Sample(emb, gh, gw, [v.bos] + ids, ids + [v.eos]))
    return out


def checksum(tensors):
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name].data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- optimisation


class AdamW:
    """Adam with decoupled weight decay on matrices only."""

    def __init__(self, params, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            if p.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def cosine_lr(step, total, base, warmup_ratio=0.03):
    """Linear warmup over ceil(ratio * total) steps, then cosine decay to zero."""
    warm = max(1, math.ceil(warmup_ratio * total))
    if step < warm:
        return base * (step + 1) / warm
    frac = (step - warm) / max(1, total - warm)
    return 0.5 * base * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------- training


@dataclass
class TrainSchedule:
    stage1_steps: int = 250
    stage2_steps: int = 250
    stage1_lr: float = 3e-3
    stage2_lr: float = 4e-4
    batch_size: int = 8
    weight_decay: float = 0.01
    warmup_ratio: float = 0.03
    single_stage: bool = False
    seed: int = 0


@dataclass
class TrainState:
    stage: int
    step: int
    frozen_groups: set
    seed: int
    optimizer: AdamW = None


@dataclass
class TrainReport:
    stage_losses: list
    checksums: dict
    accuracy: float
    final_loss: float
    steps: int

    def to_dict(self):
        return {"stage_losses": self.stage_losses, "checksums": self.checksums,
                "accuracy": self.accuracy, "final_loss": self.final_loss, "steps": self.steps}


STAGE_FROZEN = {1: {"encoder_embed", "encoder_final", "lm"}, 2: {"encoder_embed"}}


def _trainable(pipeline, frozen):
    groups = pipeline.groups()
    for name, tensors in groups.items():
        for t in tensors.values():
            t.requires_grad = name not in frozen
    return {f"{g}/{k}": t for g, ts in groups.items() if g not in frozen for k, t in ts.items()}


def _run_stage(pipeline, samples, state, steps, base_lr, schedule, losses, rng):
    params = _trainable(pipeline, state.frozen_groups)
    state.optimizer = AdamW(params, schedule.weight_decay)
    order = []
    for i in range(steps):
        batch = []
        while len(batch) < schedule.batch_size:
            if not order:
                order = rng.permutation(len(samples))
            batch.append(samples[order.pop()])
        state.optimizer.zero_grad()
        total = 0.0
        for sample in batch:
            try:
                loss = clm_loss(pipeline.logits(sample, training=True), sample.target_ids)
            except NumericError:
                # non-finite activations mean the loss is already NaN
                raise DivergenceError(state.step, math.nan) from None
            backward(scale(loss, 1.0 / len(batch)))
            total += loss.item()
        total /= len(batch)
        if not math.isfinite(total):
            raise DivergenceError(state.step, total)
        state.optimizer.step(cosine_lr(i, steps, base_lr, schedule.warmup_ratio))
        losses.append([state.step, total])
        state.step += 1


def evaluate(pipeline, samples):
    """Teacher-forced mean loss and greedy next-token accuracy, inference mode."""
    correct = total = 0
    loss_sum = 0.0
    with no_grad():
        for s in samples:
            logits = pipeline.logits(s, training=False)
            loss_sum += clm_loss(logits, s.target_ids).item()
            pred = logits.data.argmax(axis=1)
            correct += int((pred == np.asarray(s.target_ids)).sum())
            total += len(s.target_ids)
    return loss_sum / len(samples), correct / total


def pretrain_lm(lm, vocab, captions, steps=300, lr=3e-3, batch_size=8, seed=0):
    """Text-only next-token training standing in for a pretrained LLM."""
    rng = SplitMix64(seed)
    seqs = [vocab.encode(tokenize(c)) for c in captions]
    opt = AdamW(lm.tensors())
    for t in lm.tensors().values():
        t.requires_grad = True
    order = []
    for i in range(steps):
        opt.zero_grad()
        for _ in range(batch_size):
            if not order:
                order = rng.permutation(len(seqs))
            ids = seqs[order.pop()]
            loss = clm_loss(caption_logits(lm, None, [vocab.bos] + ids), ids + [vocab.eos])
            backward(scale(loss, 1.0 / batch_size))
        opt.step(cosine_lr(i, steps, lr))
    return lm


def train_two_stage(pipeline, samples, schedule):
    """Run stage 1 then stage 2 (or stage 2 alone when ``single_stage``)."""
    if not samples:
        raise LengthError("empty training set")
    rng = SplitMix64(schedule.seed)
    losses, checksums = [], {}
    state = TrainState(stage=1, step=0, frozen_groups=set(STAGE_FROZEN[1]), seed=schedule.seed)
    stages = [(2, schedule.stage1_steps + schedule.stage2_steps, schedule.stage2_lr)] if schedule.single_stage \
        else [(1, schedule.stage1_steps, schedule.stage1_lr), (2, schedule.stage2_steps, schedule.stage2_lr)]
    for stage, steps, lr in stages:
        state.stage = stage
        state.frozen_groups = set(STAGE_FROZEN[stage])
        before = {g: checksum(t) for g, t in pipeline.groups().items()}
        _run_stage(pipeline, samples, state, steps, lr, schedule, losses, rng)
        after = {g: checksum(t) for g, t in pipeline.groups().items()}
        checksums[f"stage{stage}"] = {g: {"before": before[g], "after": after[g]} for g in before}
    final_loss, accuracy = evaluate(pipeline, samples)
    return TrainReport(losses, checksums, accuracy, final_loss, state.step)


@dataclass
class ToyTaskConfig:
    n_pairs: int = 32
    data_seed: int = 0
    model_seed: int = 0
    pretrain_steps: int = 300
    pretrain_lr: float = 3e-3
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)


def build_toy_task(config):
    """Dataset, vocabulary and a pipeline whose LM has been text-pretrained."""
    pairs = make_shapes_dataset(config.n_pairs, config.data_seed, config.pipeline.image_size)
    # the LM prior comes from captions of other scenes than the training pairs
    prior = [c for _, c in make_shapes_dataset(4 * config.n_pairs, config.data_seed + 1000,
                                               config.pipeline.image_size)]
    vocab = Vocab.from_sentences(tokenize(c) for c in prior + [c for _, c in pairs])
    pipeline = ToyPipeline(config.pipeline, vocab, config.model_seed)
    pretrain_lm(pipeline.lm, vocab, prior, config.pretrain_steps, config.pretrain_lr, seed=config.model_seed)
    return pipeline, prepare_samples(pipeline, pairs)


def run_toy(config):
    pipeline, samples = build_toy_task(config)
    return train_two_stage(pipeline, samples, config.schedule)
