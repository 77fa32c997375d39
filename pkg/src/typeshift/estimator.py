"""Scikit-learn style wrapper around the translator and its training loop."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint, as_checkpoint
from .evalkit import run_generator
from .losses import LossWeights
from .netarch import ModelSpec
from .pairset import PairPolicy
from .trainkit import AugmentConfig, TrainConfig, fit_arrays
from .validation import check_glyph_batch, check_paired


class GlyphStyleTransfer(TransformerMixin, BaseEstimator):
    """Translate glyph images from a source typeface to a target typeface.

    ``fit(X, y)`` trains on source images ``X`` and target images ``y``
    (row i of ``X`` is paired with row i of ``y``; under the soft policy the
    rows need not show the same character).  ``transform`` returns generated
    images with the same layout as its input.

    Parameters
    ----------
    canvas, base_channels, style_embed_dim : int
        Model size.  The defaults give the small desk-scale network.
    policy : {"strong", "soft", "random"}
        Declares how ``y`` relates to ``X``.  Pixel L2 (``w_l2 > 0``) is only
        allowed for ``"strong"``.
    warm_start : str or None
        Checkpoint path whose generator tensors initialise the model.
    """

    def __init__(self, canvas=32, base_channels=4, style_embed_dim=8, epochs=10,
                 batch_size=16, learning_rate=1e-3, policy="soft", w_gan=1.0, w_const=1.0,
                 w_tid=10.0, w_tv=0.1, w_l2=0.0, augment=True, warm_start=None,
                 phase="infer", seed=0):
        self.canvas = canvas
        self.base_channels = base_channels
        self.style_embed_dim = style_embed_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.policy = policy
        self.w_gan = w_gan
        self.w_const = w_const
        self.w_tid = w_tid
        self.w_tv = w_tv
        self.w_l2 = w_l2
        self.augment = augment
        self.warm_start = warm_start
        self.phase = phase
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            model=ModelSpec(canvas=self.canvas, base_channels=self.base_channels,
                            style_embed_dim=self.style_embed_dim),
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, policy=PairPolicy(self.policy),
            weights=LossWeights(self.w_gan, self.w_const, self.w_tid, self.w_tv, self.w_l2),
            augment=AugmentConfig(enabled=bool(self.augment)),
            seed=self.seed, warm_start=self.warm_start)

    def fit(self, X, y):
        config = self._config()
        X, y = check_paired(X, y, self.canvas)
        to = lambda a: torch.from_numpy(a).permute(0, 3, 1, 2).contiguous()
        result = fit_arrays(config, to(X), to(y))
        self.checkpoint_ = result.checkpoint
        self.history_ = result.log
        self.n_steps_ = result.checkpoint.step
        self.generator_ = result.checkpoint.generator()
        return self

    def transform(self, X):
        check_is_fitted(self, "generator_")
        X = check_glyph_batch(X, self.canvas)
        return run_generator(self.generator_, X, self.phase, self.batch_size)

    predict = transform

    def score(self, X, y):
        """Negative mean pixel L2 against aligned ground truth (higher is better)."""
        X, y = check_paired(X, y, self.canvas)
        out = self.transform(X)
        return -float(((out.astype(np.float64) - y) ** 2).mean())

    def save(self, path):
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_.save(path)

    @classmethod
    def from_checkpoint(cls, ckpt, phase="infer") -> "GlyphStyleTransfer":
        ckpt: Checkpoint = as_checkpoint(ckpt)
        spec = ckpt.spec
        est = cls(canvas=spec.canvas, base_channels=spec.base_channels,
                  style_embed_dim=spec.style_embed_dim, phase=phase)
        est.checkpoint_ = ckpt
        est.history_ = []
        est.n_steps_ = ckpt.step
        est.generator_ = ckpt.generator()
        return est
