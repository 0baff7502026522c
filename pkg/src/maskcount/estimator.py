"""Scikit-learn style estimator facade over the counting pipeline.

``MaskAwareCounter`` takes grayscale images as X and per-image head
coordinates as y, handles GT generation, patching and training in
``fit``, and predicts per-image counts in ``predict``. Hyperparameters
follow sklearn conventions (stored verbatim, validated at fit time), so
the estimator works with ``clone``, ``get_params`` and model-selection
utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .backbone import BackboneConfig
from .gt import GtConfig, PointAnnotation, derive_mask, generate_density_map
from .losses import LossConfig
from .metrics import count_from_density
from .model import assemble_model, count_parameters, predict_maps
from .train import TrainSchedule, make_train_patches, train
from .validation import as_image, as_points


class _FitEntry:
    # matches the attribute surface make_train_patches expects
    def __init__(self, image, density, mask):
        self.image = image
        self.density = density
        self.mask = mask


class MaskAwareCounter(BaseEstimator, RegressorMixin):
    """Crowd counter trained from dot annotations.

    Parameters mirror the underlying configs: ``variant`` picks the fusion
    topology (S1..S5 or baselines B1..B3), ``sigma``/``radius`` shape the
    GT kernels, ``width_mult`` scales every channel width for desk-scale
    runs, and the schedule fields drive the Adam-to-SGD training loop.
    """

    def __init__(
        self,
        variant: str = "S5",
        sigma: float = 4.0,
        radius: int = 15,
        downsample: int = 4,
        width_mult: float = 1.0,
        init_std: float = 0.01,
        unit_count: int = 2,
        alpha: float = 1.0,
        gamma: float = 2.0,
        adam_epochs: int = 10,
        total_epochs: int = 30,
        base_lr: float = 1e-5,
        decay_factor: float = 0.1,
        decay_every: int = 20,
        batch_size: int = 16,
        sgd_momentum: float = 0.9,
        patches_per_image: int = 4,
        patch_size: tuple[int, int] = (192, 160),
        clamp_counts: bool = False,
        seed: int = 0,
    ):
        self.variant = variant
        self.sigma = sigma
        self.radius = radius
        self.downsample = downsample
        self.width_mult = width_mult
        self.init_std = init_std
        self.unit_count = unit_count
        self.alpha = alpha
        self.gamma = gamma
        self.adam_epochs = adam_epochs
        self.total_epochs = total_epochs
        self.base_lr = base_lr
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.batch_size = batch_size
        self.sgd_momentum = sgd_momentum
        self.patches_per_image = patches_per_image
        self.patch_size = patch_size
        self.clamp_counts = clamp_counts
        self.seed = seed

    # ------------------------------------------------------------------

    def _configs(self):
        gt_cfg = GtConfig(sigma=self.sigma, radius=self.radius, downsample=self.downsample)
        net_cfg = BackboneConfig(
            init_std=self.init_std, unit_count=self.unit_count, width_mult=self.width_mult
        )
        loss_cfg = LossConfig(alpha=self.alpha, gamma=self.gamma)
        schedule = TrainSchedule(
            adam_epochs=self.adam_epochs,
            base_lr=self.base_lr,
            decay_factor=self.decay_factor,
            decay_every=self.decay_every,
            total_epochs=self.total_epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            sgd_momentum=self.sgd_momentum,
        )
        return gt_cfg, net_cfg, loss_cfg, schedule

    def fit(self, X, y):
        """Train on images ``X`` and per-image (x, y) head coordinates ``y``."""
        if len(X) != len(y):
            raise ValueError(f"got {len(X)} images but {len(y)} annotation lists")
        if len(X) == 0:
            raise ValueError("need at least one training image")
        gt_cfg, net_cfg, loss_cfg, schedule = self._configs()

        entries = []
        for image, points in zip(X, y):
            image = as_image(image)
            h, w = image.shape
            ann = PointAnnotation(width=w, height=h, points=as_points(points))
            density = generate_density_map(ann, gt_cfg.sigma, gt_cfg.radius)
            entries.append(_FitEntry(image, density, derive_mask(density)))

        rng = np.random.default_rng(self.seed)
        patches = make_train_patches(
            entries, gt_cfg, self.patches_per_image, tuple(self.patch_size), rng
        )
        self.model_ = assemble_model(self.variant, net_cfg, seed=self.seed)
        self.n_parameters_ = count_parameters(self.model_)
        self.history_ = train(self.model_, patches, schedule, loss_cfg)
        return self

    def predict_density(self, X) -> list[np.ndarray]:
        """Per-image density maps at the network output stride."""
        self._check_fitted()
        return [predict_maps(self.model_, as_image(image))[0] for image in X]

    def predict(self, X) -> np.ndarray:
        """Predicted head count per image."""
        return np.array(
            [count_from_density(d, clamp_negative=self.clamp_counts) for d in self.predict_density(X)]
        )

    def score(self, X, y) -> float:
        """Negative mean absolute count error (higher is better)."""
        self._check_fitted()
        pred = self.predict(X)
        gt = np.array([len(as_points(points)) for points in y], dtype=np.float64)
        return -float(np.mean(np.abs(pred - gt)))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this MaskAwareCounter instance is not fitted yet")
