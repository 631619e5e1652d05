"""Scikit-learn-style wrappers around the functional core.

Both estimators implement the ``get_params`` / ``set_params`` protocol via
constructor-argument introspection (same contract as ``BaseEstimator``, no
dependency needed), so they compose with pipelines, grid search, and
``clone``.
"""

from __future__ import annotations

import inspect

import numpy as np

from .bundle import FeatureBundle
from .data import gen_dataset
from .diffusion import sample as _sample
from .errors import ValidationError
from .image import Image
from .model import ModelConfig, SsgDitModel, build_condition
from .prompt import PromptParams, make_prompt
from .training import (
    TrainConfig,
    TrainReport,
    eval_conditions,
    eval_loss,
    init_protocol_model,
    make_val_set,
    train,
)


class ParamsMixin:
    """get_params/set_params over the constructor signature."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValidationError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self


class SpatialPrompter(ParamsMixin):
    """Stateless transformer: (image, feature bundle) pairs -> prompt images."""

    def __init__(self, gamma: float = 2.0, pool: bool = True,
                 blur_sigma: float | None = None, eps: float = 1e-12,
                 branches: str = "both"):
        self.gamma = gamma
        self.pool = pool
        self.blur_sigma = blur_sigma
        self.eps = eps
        self.branches = branches

    def _params(self) -> PromptParams:
        return PromptParams(
            gamma=self.gamma,
            pool=self.pool,
            blur_sigma=self.blur_sigma,
            eps=self.eps,
            branches=self.branches,
        )

    def fit(self, X=None, y=None):
        # Nothing to learn; present for pipeline compatibility.
        self._params()  # validates the configured parameters
        return self

    def transform(self, X) -> list[Image]:
        """X: iterable of (Image, FeatureBundle) pairs."""
        params = self._params()
        out = []
        for img, bundle in X:
            if not isinstance(img, Image) or not isinstance(bundle, FeatureBundle):
                raise ValidationError("SpatialPrompter.transform expects (Image, FeatureBundle) pairs")
            out.append(make_prompt(img, bundle, params).prompt)
        return out

    def fit_transform(self, X, y=None) -> list[Image]:
        return self.fit(X, y).transform(X)


class SsgDitGenerator(ParamsMixin):
    """Two-phase trainer/sampler behind a fit/sample/score interface.

    ``fit`` pretrains the backbone unconditionally, freezes it, then trains
    the adapter on the conditioned samples.  ``sample`` draws a latent clip
    for a caption id; ``score`` returns negated validation loss (higher is
    better, sklearn convention).
    """

    def __init__(self, backbone_steps: int = 2000, adapter_steps: int = 2000,
                 batch: int = 8, lr: float = 1e-2, seed: int = 1,
                 n_val: int = 32):
        self.backbone_steps = backbone_steps
        self.adapter_steps = adapter_steps
        self.batch = batch
        self.lr = lr
        self.seed = seed
        self.n_val = n_val

    def fit(self, samples, y=None):
        backbone_cfg = TrainConfig(
            phase="backbone", steps=self.backbone_steps, batch=self.batch,
            lr=self.lr, seed=self.seed,
        )
        adapter_cfg = TrainConfig(
            phase="adapter", steps=self.adapter_steps, batch=self.batch,
            lr=self.lr, seed=self.seed,
        )
        self.schedule_ = backbone_cfg.schedule()
        self.model_ = init_protocol_model(ModelConfig(), self.seed)
        self.backbone_report_: TrainReport = train(self.model_, list(samples), backbone_cfg)
        self.adapter_report_: TrainReport = train(self.model_, list(samples), adapter_cfg)
        return self

    def _check_fitted(self) -> SsgDitModel:
        if not hasattr(self, "model_"):
            raise ValidationError("SsgDitGenerator is not fitted yet; call fit first")
        return self.model_

    def sample(self, caption_id: int, prompt: Image | None = None, seed: int = 0) -> np.ndarray:
        """Draw one latent clip conditioned on ``caption_id``.

        Without an explicit prompt image, a canonical held-out prompt for the
        caption's anchor is used."""
        model = self._check_fitted()
        if prompt is None:
            cond = eval_conditions(model, branches="both", use_text=True)[caption_id]
        else:
            cond = build_condition(model, caption_id, prompt)
        return _sample(model, cond, self.schedule_, seed)

    def score(self, samples=None, y=None) -> float:
        model = self._check_fitted()
        val = make_val_set(self.seed + 7919, self.n_val, self.schedule_)
        return -eval_loss(model, val, self.schedule_, conditioned=True)


def demo_dataset(seed: int = 1, n: int = 64):
    """Convenience for estimator examples and smoke tests."""
    return gen_dataset(seed, n)
