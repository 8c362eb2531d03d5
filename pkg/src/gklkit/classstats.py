"""Class-mean probability table and boundary margins."""
from __future__ import annotations

import numpy as np

from .numerics import softmax

__all__ = ["ClassWeightTable"]


class ClassWeightTable:
    """Per-class mean of ``softmax(logits / tau)`` over the samples of that class.

    Samples are accumulated with :meth:`update` and only become visible in
    ``rows`` after :meth:`commit`, so a whole epoch reads one fixed table.
    Classes that have never been observed keep the uniform row ``1 / C``.
    """

    def __init__(self, num_classes):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.num_classes = int(num_classes)
        self.rows = np.full((num_classes, num_classes), 1.0 / num_classes)
        self.sums = np.zeros((num_classes, num_classes))
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.epoch = 0

    def _check_labels(self, labels):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = labels[(labels < 0) | (labels >= self.num_classes)][0]
            raise ValueError(f"label {int(bad)} out of range [0, {self.num_classes})")
        return labels.astype(np.int64)

    def update(self, logits, labels, tau=1.0):
        """Accumulate ``softmax(logits / tau)`` into each sample's label slot."""
        if tau <= 0:
            raise ValueError(f"tau must be positive, got {tau}")
        logits = np.atleast_2d(logits)
        labels = self._check_labels(labels)
        if logits.shape != (labels.shape[0], self.num_classes):
            raise ValueError(f"logits {logits.shape} do not match {labels.shape[0]} labels x {self.num_classes} classes")
        np.add.at(self.sums, labels, softmax(logits / tau))
        self.counts += np.bincount(labels, minlength=self.num_classes)
        return self

    def commit(self):
        """Publish the accumulated means and start a new epoch."""
        seen = self.counts > 0
        self.rows[seen] = self.sums[seen] / self.counts[seen, None]
        self.sums[:] = 0.0
        self.counts[:] = 0
        self.epoch += 1
        return self

    def weight_vector(self, label, gamma):
        """``rows[label] ** gamma``; the outer product gives the pairwise weights."""
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        label = int(self._check_labels([label])[0])
        return np.power(self.rows[label], gamma)

    def weight_vectors(self, labels, gamma):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        return np.power(self.rows[self._check_labels(labels)], gamma)

    def margin(self, label):
        """``rows[y][y] - max_{k != y} rows[y][k]``."""
        y = int(self._check_labels([label])[0])
        row = self.rows[y]
        return float(row[y] - np.delete(row, y).max())

    def margins(self):
        return np.array([self.margin(y) for y in range(self.num_classes)])

    def to_dict(self):
        return {"num_classes": self.num_classes, "epoch": self.epoch, "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, data):
        table = cls(data["num_classes"])
        rows = np.asarray(data["rows"], dtype=np.float64)
        if rows.shape != table.rows.shape:
            raise ValueError(f"table rows have shape {rows.shape}, expected {table.rows.shape}")
        table.rows = rows
        table.epoch = int(data.get("epoch", 0))
        return table
