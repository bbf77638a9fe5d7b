"""scikit-learn compatible wrapper around the training and inference pipeline."""
import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from ._validation import ContractError, check_images
from .config import TrainConfig
from .inference import coarse_predict, coarse_to_fine_predict, object_bbox, object_map
from .trainer import TrainState, fit, split_validation


class WSDANClassifier(ClassifierMixin, BaseEstimator):
    """Attention-augmented fine-grained image classifier.

    ``X`` is an array of standardized channels-last images ``(n, h, w, 3)``
    as produced by :func:`wsdan.data.preprocess`. With ``refine=True``
    probabilities come from coarse-to-fine prediction.

    Parameters mirror :class:`wsdan.config.TrainConfig`; ``random_state``
    seeds weight init, data order and augmentation. Defaults differ from the
    config file defaults where those do not train a small backbone from
    scratch: a larger ``lr_init``, a weak ``lam`` and ``last_stride=1``.
    """

    def __init__(self, num_parts=4, num_features=64, epochs=50, batch_size=16,
                 lr_init=0.05, lr_decay=0.9, lr_decay_every_epochs=2, momentum=0.9,
                 weight_decay=1e-5, theta_c=0.5, theta_d=0.5, theta_loc=0.1, beta=0.05,
                 lam=0.01, crop=True, drop=True, augment="attention", refine=True,
                 last_stride=1, val_fraction=0.0, random_state=0):
        self.num_parts = num_parts
        self.num_features = num_features
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_init = lr_init
        self.lr_decay = lr_decay
        self.lr_decay_every_epochs = lr_decay_every_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.theta_c = theta_c
        self.theta_d = theta_d
        self.theta_loc = theta_loc
        self.beta = beta
        self.lam = lam
        self.crop = crop
        self.drop = drop
        self.augment = augment
        self.refine = refine
        self.last_stride = last_stride
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _config(self, num_classes, input_size):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr_init=self.lr_init,
            lr_decay=self.lr_decay, lr_decay_every_epochs=self.lr_decay_every_epochs,
            momentum=self.momentum, weight_decay=self.weight_decay, theta_c=self.theta_c,
            theta_d=self.theta_d, theta_loc=self.theta_loc, beta=self.beta, lam=self.lam,
            crop=self.crop, drop=self.drop, augment=self.augment, num_parts=self.num_parts,
            num_features=self.num_features, input_size=input_size, num_classes=num_classes,
            last_stride=self.last_stride, seed=self.random_state, val_fraction=self.val_fraction,
        ).validate()

    def fit(self, X, y):
        images = check_images(X)
        y = np.asarray(y)
        if len(y) != len(images):
            raise ContractError(f"X has {len(images)} images but y has {len(y)} labels")
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        labels = torch.from_numpy(encoded.astype(np.int64))
        cfg = self._config(len(self.classes_), images.shape[2])
        val_images = val_labels = None
        if self.val_fraction > 0:
            tr, va = (torch.from_numpy(i) for i in split_validation(len(labels), cfg))
            images, labels, val_images, val_labels = images[tr], labels[tr], images[va], labels[va]
        state = fit(TrainState(cfg), images, labels, val_images, val_labels)
        self.model_ = state.model.eval()
        self.centers_ = state.centers
        self.history_ = state.history
        return self

    def _images(self, X):
        check_is_fitted(self, "model_")
        return check_images(X)

    def predict_proba(self, X, batch_size=64):
        images = self._images(X)
        out = []
        for i in range(0, len(images), batch_size):
            chunk = images[i:i + batch_size]
            if self.refine:
                out.extend(p.probabilities for p in coarse_to_fine_predict(self.model_, chunk, self.theta_loc))
            else:
                out.extend(coarse_predict(self.model_, chunk)[0])
        return np.stack(out)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    @torch.no_grad()
    def transform(self, X):
        """Flattened part feature matrices, shape ``(n, num_parts * num_features)``."""
        images = self._images(X)
        return self.model_.eval()(images).parts.flatten(1).double().numpy()

    def localize(self, X):
        """Object boxes from the averaged attention maps, in input pixel coordinates."""
        images = self._images(X)
        h, w = images.shape[2:]
        _, attention = coarse_predict(self.model_, images)
        return [object_bbox(object_map(a), self.theta_loc, h, w) for a in attention]
