"""scikit-learn style wrappers so the pipeline stages compose with Pipeline, clone, etc."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import bench
from ._validation import check_images, check_n_features, check_token_grids
from .exceptions import DimensionError
from .frontend import FrontendConfig, StubPatchEncoder, encode_image
from .lm import Vocab, caption_logits
from .metrics import tokenize
from .nta import (
    NtaConfig,
    baseline_mlp_adaptor,
    init_mlp_params,
    init_nta_params,
    init_vanilla_params,
    nta_forward,
    vanilla_adaptor_forward,
)
from .tensor import Tensor, no_grad, pixel_shuffle_s2d, pixel_unshuffle_d2s
from .training import (
    PipelineConfig,
    ToyPipeline,
    TrainSchedule,
    evaluate,
    prepare_samples,
    pretrain_lm,
    train_two_stage,
)


class AdaptiveSliceEncoder(BaseEstimator, TransformerMixin):
    """Image -> per-slice compressed token grids of shape (S, h, w, d)."""

    def __init__(self, threshold_px=448, vit_region_w=448, vit_region_h=448, patch_size=16,
                 shuffle_rate=2, n_max=12, embed_dim=16, seed=0):
        self.threshold_px = threshold_px
        self.vit_region_w = vit_region_w
        self.vit_region_h = vit_region_h
        self.patch_size = patch_size
        self.shuffle_rate = shuffle_rate
        self.n_max = n_max
        self.embed_dim = embed_dim
        self.seed = seed

    def _config(self):
        return FrontendConfig(self.threshold_px, self.vit_region_w, self.vit_region_h, self.patch_size,
                              self.shuffle_rate, self.n_max, self.embed_dim).validate()

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.encoder_ = StubPatchEncoder(self.patch_size, self.embed_dim, self.seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        images, single = check_images(X)
        out, self.grids_ = [], []
        for img in images:
            grid, tokens = encode_image(img, self.config_, encoder=self.encoder_)
            self.grids_.append(grid)
            out.append(np.stack([t.values.data for t in tokens]))
        return out[0] if single else out


class PixelShuffleCompressor(BaseEstimator, TransformerMixin):
    """Space-to-depth on (h, w, d) grids; ``inverse_transform`` undoes it exactly."""

    def __init__(self, rate=2):
        self.rate = rate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        grids, single = check_token_grids(X)
        out = np.stack([pixel_shuffle_s2d(Tensor(g), self.rate).data for g in grids])
        return out[0] if single else out

    def inverse_transform(self, X):
        grids, single = check_token_grids(X)
        out = np.stack([pixel_unshuffle_d2s(Tensor(g), self.rate).data for g in grids])
        return out[0] if single else out

    def param_shapes(self):
        return {}

    def cost(self, input_shape):
        return bench.PixelShuffleSpec(self.rate).cost(input_shape)


class _AdaptorBase(BaseEstimator, TransformerMixin):
    """Shared fit/transform plumbing; subclasses define ``_setup`` and ``_forward``."""

    def fit(self, X, y=None):
        grids, _ = check_token_grids(X)
        self.n_features_in_ = grids.shape[-1]
        self._setup(grids)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        grids, single = check_token_grids(X)
        check_n_features(self, grids.shape[-1])
        with no_grad():
            out = np.stack([self._forward(Tensor(g)).data for g in grids])
        return out[0] if single else out

    def param_shapes(self):
        check_is_fitted(self, "params_")
        return self.params_.param_shapes()


class NanoTransformerAdaptor(_AdaptorBase):
    """Pooled-query attention adaptor: (h, w, d) grid -> (h*w/4, dim_lang) tokens.

    ``fit`` draws seeded weights for the observed channel width and, with
    ``calibrate_bn``, runs the grids through in training mode so the GDC batch
    norm running statistics reflect the data.
    """

    def __init__(self, dim_lang=96, pooled_h=12, pooled_w=12, heads=4, gdc_kernel=3, gdc_dilation=2,
                 eps=1e-5, softmax_stage1=True, use_gdc=True, calibrate_bn=True, seed=0):
        self.dim_lang = dim_lang
        self.pooled_h = pooled_h
        self.pooled_w = pooled_w
        self.heads = heads
        self.gdc_kernel = gdc_kernel
        self.gdc_dilation = gdc_dilation
        self.eps = eps
        self.softmax_stage1 = softmax_stage1
        self.use_gdc = use_gdc
        self.calibrate_bn = calibrate_bn
        self.seed = seed

    def _setup(self, grids):
        cfg = NtaConfig(dim_d=grids.shape[-1], pooled_h=self.pooled_h, pooled_w=self.pooled_w,
                        heads=self.heads, gdc_kernel=self.gdc_kernel, gdc_dilation=self.gdc_dilation,
                        dim_lang=self.dim_lang, eps=self.eps, softmax_stage1=self.softmax_stage1,
                        use_gdc=self.use_gdc).validate()
        self.config_ = cfg
        self.params_ = init_nta_params(cfg, self.seed)
        if self.calibrate_bn:
            with no_grad():
                for g in grids:
                    nta_forward(Tensor(g), self.params_, cfg, training=True)

    def _forward(self, grid):
        return nta_forward(grid, self.params_, self.config_)

    def cost(self, input_shape):
        check_is_fitted(self, "params_")
        h, w, _ = input_shape
        return bench.nta_cost(self.config_, h, w)


class VanillaAttentionAdaptor(_AdaptorBase):
    """Same layout as the NTA with dense softmax attention and an output projection."""

    def __init__(self, dim_lang=96, heads=4, eps=1e-5, seed=0):
        self.dim_lang = dim_lang
        self.heads = heads
        self.eps = eps
        self.seed = seed

    def _setup(self, grids):
        self.config_ = NtaConfig(dim_d=grids.shape[-1], heads=self.heads, dim_lang=self.dim_lang,
                                 eps=self.eps).validate()
        self.params_ = init_vanilla_params(self.config_, self.seed)

    def _forward(self, grid):
        return vanilla_adaptor_forward(grid, self.params_, self.config_)

    def cost(self, input_shape):
        check_is_fitted(self, "params_")
        h, w, _ = input_shape
        return bench.vanilla_adaptor_cost(self.config_, h, w)


class MLPAdaptor(_AdaptorBase):
    """Two-layer GeLU MLP applied token-wise; token count unchanged."""

    def __init__(self, dim_lang=96, hidden=None, seed=0):
        self.dim_lang = dim_lang
        self.hidden = hidden
        self.seed = seed

    def _setup(self, grids):
        self.params_ = init_mlp_params(grids.shape[-1], self.dim_lang, self.hidden, self.seed)

    def _forward(self, grid):
        return baseline_mlp_adaptor(grid, self.params_)

    def cost(self, input_shape):
        check_is_fitted(self, "params_")
        h, w, d = input_shape
        return bench.mlp_cost(h * w, d, self.params_.w1.shape[1], self.dim_lang)


class ToyCaptioner(BaseEstimator):
    """End-to-end toy captioner trained with the two-stage schedule.

    ``fit(images, captions)`` pretrains the language model on the captions
    alone, then aligns the adaptor (stage 1) and fine-tunes (stage 2).
    """

    def __init__(self, pipeline_config=None, schedule=None, pretrain_steps=300, pretrain_lr=3e-3, seed=0):
        self.pipeline_config = pipeline_config
        self.schedule = schedule
        self.pretrain_steps = pretrain_steps
        self.pretrain_lr = pretrain_lr
        self.seed = seed

    def fit(self, X, y):
        images, _ = check_images(X)
        if len(images) != len(y):
            raise DimensionError(f"{len(images)} images but {len(y)} captions")
        vocab = Vocab.from_sentences(tokenize(c) for c in y)
        self.pipeline_ = ToyPipeline(self.pipeline_config or PipelineConfig(), vocab, self.seed)
        pretrain_lm(self.pipeline_.lm, vocab, list(y), self.pretrain_steps, self.pretrain_lr, seed=self.seed)
        samples = prepare_samples(self.pipeline_, list(zip(images, y)))
        self.report_ = train_two_stage(self.pipeline_, samples, self.schedule or TrainSchedule(seed=self.seed))
        return self

    def predict(self, X, max_len=None):
        """Greedy decoding until EOS."""
        check_is_fitted(self, "pipeline_")
        images, single = check_images(X)
        pipe = self.pipeline_
        vocab, lm = pipe.vocab, pipe.lm
        out = []
        with no_grad():
            for img in images:
                emb, gh, gw = pipe.encoder.embed(img)
                vis = pipe.visual_tokens(emb, gh, gw)
                ids = [vocab.bos]
                limit = max_len or lm.config.max_seq_len - vis.shape[0]
                while len(ids) < limit:
                    nxt = int(caption_logits(lm, vis, ids).data[-1].argmax())
                    if nxt == vocab.eos:
                        break
                    ids.append(nxt)
                out.append(" ".join(vocab.decode(ids[1:])))
        return out[0] if single else out

    def score(self, X, y):
        """Teacher-forced next-token accuracy on (images, captions)."""
        check_is_fitted(self, "pipeline_")
        images, _ = check_images(X)
        return evaluate(self.pipeline_, prepare_samples(self.pipeline_, list(zip(images, y))))[1]
