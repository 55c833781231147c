"""scikit-learn style wrappers around tensor fitting and tensor de-noising.

Images are passed as arrays: DWI stacks as lists of :class:`DwiStack`, tensor
images as ``(n_samples, 6, H, W)`` arrays in mm^2/s with optional
``(n_samples, H, W)`` boolean masks.
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import DwiStack
from .denoise.data import TensorPair
from .denoise.training import TrainConfig, ensemble_predict, fit_norm_stats, loss_l1, train
from .exceptions import ValidationError
from .fitting import BreathHoldBudget, SamplingScheme, fit_stack, select_repetitions
from .registration import register_stack


def check_tensor_images(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 6:
        raise ValidationError(f"{name} must have shape (n_samples, 6, H, W), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def check_masks(mask, X):
    if mask is None:
        return np.any(X != 0, axis=1)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.shape != (X.shape[0],) + X.shape[2:]:
        raise ValidationError(f"mask shape {mask.shape} does not match images {X.shape}")
    return mask


class TensorFitter(BaseEstimator, TransformerMixin):
    """Registration, repetition selection and linear least-squares tensor fit.

    ``transform`` maps a list of DWI stacks to ``(n, 6, H, W)`` tensors.
    """

    def __init__(self, scheme="First", budget=None, register=True, seed=0):
        self.scheme = scheme
        self.budget = budget
        self.register = register
        self.seed = seed

    def fit(self, X, y=None):
        self._check_stacks(X)
        self.scheme_ = SamplingScheme(self.scheme, seed=self.seed)
        self.budget_ = None if self.budget is None else BreathHoldBudget.named(self.budget)
        return self

    @staticmethod
    def _check_stacks(X):
        if isinstance(X, DwiStack):
            X = [X]
        if not X or not all(isinstance(s, DwiStack) for s in X):
            raise ValidationError("X must be a non-empty list of DwiStack")
        return list(X)

    def transform(self, X):
        check_is_fitted(self, "scheme_")
        out = []
        for stack in self._check_stacks(X):
            if self.register:
                stack = register_stack(stack)
            if self.budget_ is not None:
                stack = select_repetitions(stack, self.scheme_, self.budget_)
            out.append(fit_stack(stack).components)
        return np.stack(out)


class TensorDenoiser(BaseEstimator, RegressorMixin):
    """Residual tensor-to-tensor de-noiser trained with an L1 or WGAN objective."""

    def __init__(self, normalization="zscore", objective="l1_only", residual=True, epochs=20,
                 learning_rate=2e-3, batch_size=8, crop_size=48, max_rotation=180.0,
                 augment=True, depth=3, width=16, critic_steps=5, clip_value=0.01,
                 adversarial_weight=0.01, seed=0):
        self.normalization = normalization
        self.objective = objective
        self.residual = residual
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.max_rotation = max_rotation
        self.augment = augment
        self.depth = depth
        self.width = width
        self.critic_steps = critic_steps
        self.clip_value = clip_value
        self.adversarial_weight = adversarial_weight
        self.seed = seed

    def _config(self, seed=None, shape=None):
        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in self.get_params().items() if k in names}
        if seed is not None:
            kw["seed"] = seed
        if shape is not None and kw["crop_size"] is not None:
            kw["crop_size"] = min(kw["crop_size"], *shape)
        return TrainConfig(**kw)

    @staticmethod
    def _pairs(X, y, mask, groups=None):
        ids = [str(g) for g in groups] if groups is not None else [str(i) for i in range(len(X))]
        return [TensorPair(ids[i], "", "", X[i] * mask[i], y[i] * mask[i], mask[i])
                for i in range(len(X))]

    def _validate_fit(self, X, y, mask):
        X = check_tensor_images(X)
        y = check_tensor_images(y, "y")
        if y.shape != X.shape:
            raise ValidationError("X and y differ in shape")
        return X, y, check_masks(mask, X)

    def fit(self, X, y, mask=None, X_val=None, y_val=None, mask_val=None):
        X, y, mask = self._validate_fit(X, y, mask)
        val = []
        if X_val is not None:
            Xv, yv, mv = self._validate_fit(X_val, y_val, mask_val)
            val = self._pairs(Xv, yv, mv)
        result = train(self._config(shape=X.shape[2:]), self._pairs(X, y, mask), val,
                       self.objective, self.normalization, self.residual)
        self.model_ = result.model
        self.history_ = result.history
        self.n_features_in_ = 6
        return self

    def _models(self):
        check_is_fitted(self, "model_")
        return [self.model_]

    def predict(self, X, mask=None):
        X = check_tensor_images(X)
        mask = check_masks(mask, X)
        return ensemble_predict(self._models(), X * mask[:, None], mask)

    def score(self, X, y, mask=None):
        """Negative masked mean absolute error (higher is better)."""
        X = check_tensor_images(X)
        y = check_tensor_images(y, "y")
        mask = check_masks(mask, X)
        return -loss_l1(self.predict(X, mask), y * mask[:, None], mask)


class BaggedTensorDenoiser(TensorDenoiser):
    """Bagging ensemble: members see bootstrap resamples of the training
    groups, use consecutive seeds and share normalisation statistics."""

    def __init__(self, n_estimators=5, normalization="zscore", objective="wgan", residual=True,
                 epochs=20, learning_rate=2e-3, batch_size=8, crop_size=48, max_rotation=180.0,
                 augment=True, depth=3, width=16, critic_steps=5, clip_value=0.01,
                 adversarial_weight=0.01, seed=0):
        super().__init__(normalization, objective, residual, epochs, learning_rate, batch_size,
                         crop_size, max_rotation, augment, depth, width, critic_steps,
                         clip_value, adversarial_weight, seed)
        self.n_estimators = n_estimators

    def fit(self, X, y, mask=None, groups=None, X_val=None, y_val=None, mask_val=None):
        if self.n_estimators < 1:
            raise ValidationError("n_estimators must be >= 1")
        X, y, mask = self._validate_fit(X, y, mask)
        groups = np.arange(len(X)) if groups is None else np.asarray(groups)
        if len(groups) != len(X):
            raise ValidationError("groups must have one entry per sample")
        pairs = self._pairs(X, y, mask, groups)
        val = []
        if X_val is not None:
            Xv, yv, mv = self._validate_fit(X_val, y_val, mask_val)
            val = self._pairs(Xv, yv, mv)
        norm = fit_norm_stats(pairs, self.normalization)
        unique = np.unique(groups)
        self.estimators_ = []
        for k in range(self.n_estimators):
            if self.n_estimators == 1:
                members = pairs
            else:
                rng = np.random.default_rng(np.random.SeedSequence(int(self.seed),
                                                                   spawn_key=(99, k)))
                drawn = unique[rng.integers(0, len(unique), len(unique))]
                members = [p for g in drawn for p, pg in zip(pairs, groups) if pg == g]
            result = train(self._config(self.seed + k, X.shape[2:]), members, val,
                           self.objective, self.normalization, self.residual, norm_stats=norm)
            self.estimators_.append(result.model)
        self.model_ = self.estimators_[0]
        self.n_features_in_ = 6
        return self

    def _models(self):
        check_is_fitted(self, "estimators_")
        return self.estimators_
