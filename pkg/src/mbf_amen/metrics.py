"""OA / Sen / PPV / F1 from a confusion matrix.

A zero denominator never raises: the value is reported as undefined
(``None``, serialized as JSON ``null``).
"""
import numpy as np

from .exceptions import ArgumentError, ShapeError

METRIC_NAMES = ("OA", "Sen", "PPV", "F1")
DISPLAY_DIGITS = 4


class ConfusionCounts:
    """``matrix[true, predicted]`` counts plus the designated positive class"""

    def __init__(self, matrix, positive_class=1):
        self.matrix = np.asarray(matrix, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError("confusion matrix must be square", self.matrix.shape)
        if not 0 <= positive_class < self.num_classes:
            raise ArgumentError(
                f"positive class {positive_class} outside [0, {self.num_classes})"
            )
        self.positive_class = int(positive_class)

    @property
    def num_classes(self):
        return self.matrix.shape[0]

    @property
    def n(self):
        return int(self.matrix.sum())

    def per_class(self):
        """(tp, fp, fn, tn) arrays, one entry per class, one-vs-rest"""
        tp = np.diag(self.matrix)
        fp = self.matrix.sum(axis=0) - tp
        fn = self.matrix.sum(axis=1) - tp
        tn = self.n - tp - fp - fn
        return tp, fp, fn, tn

    def _positive(self, which):
        return int(self.per_class()[which][self.positive_class])

    @property
    def tp(self):
        return self._positive(0)

    @property
    def fp(self):
        return self._positive(1)

    @property
    def fn(self):
        return self._positive(2)

    @property
    def tn(self):
        return self._positive(3)

    def __repr__(self):
        return "ConfusionCounts(TP=%i, FP=%i, FN=%i, TN=%i, N=%i)" % (
            self.tp,
            self.fp,
            self.fn,
            self.tn,
            self.n,
        )


def confusion(true_labels, pred_labels, positive_class=1, num_classes=None):
    true_labels = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    pred_labels = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if true_labels.shape != pred_labels.shape:
        raise ShapeError("label vectors differ in length", true_labels.shape, pred_labels.shape)
    if num_classes is None:
        observed = max(
            [int(x.max()) + 1 for x in (true_labels, pred_labels) if x.size] or [0]
        )
        num_classes = max(2, observed, positive_class + 1)
    for labels in (true_labels, pred_labels):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ArgumentError(f"label outside [0, {num_classes})")
    matrix = np.bincount(
        true_labels * num_classes + pred_labels, minlength=num_classes * num_classes
    ).reshape(num_classes, num_classes)
    return ConfusionCounts(matrix, positive_class)


def _ratio(numerator, denominator):
    if denominator == 0:
        return None
    return float(numerator) / float(denominator)


def f1_score(sen, ppv):
    """Harmonic mean of sensitivity and positive predictive value"""
    if sen is None or ppv is None or sen + ppv == 0:
        return None
    return 2 * sen * ppv / (sen + ppv)


def _defined_mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.mean(values))


class MetricReport:
    def __init__(self, oa, sen, ppv, f1):
        self.oa = oa
        self.sen = sen
        self.ppv = ppv
        self.f1 = f1

    def values(self):
        return {"OA": self.oa, "Sen": self.sen, "PPV": self.ppv, "F1": self.f1}

    def to_dict(self):
        """Display values rounded to 4 decimals, full precision under ``raw``"""
        result = {
            k: (None if v is None else round(v, DISPLAY_DIGITS))
            for k, v in self.values().items()
        }
        result["raw"] = self.values()
        return result

    @classmethod
    def from_dict(cls, d):
        raw = d.get("raw", d)
        return cls(raw["OA"], raw["Sen"], raw["PPV"], raw["F1"])

    def __eq__(self, other):
        return isinstance(other, MetricReport) and self.values() == other.values()

    def __repr__(self):
        return "MetricReport(%s)" % ", ".join(
            f"{k}={format_value(v)}" for k, v in self.values().items()
        )


def compute_metrics(counts):
    """OA = correct / N; Sen, PPV for the positive class (binary) or the
    macro average over classes with a defined value (more than two classes);
    F1 from the reported Sen and PPV."""
    oa = _ratio(np.trace(counts.matrix), counts.n)
    tp, fp, fn, _ = counts.per_class()
    if counts.num_classes == 2:
        c = counts.positive_class
        sen = _ratio(tp[c], tp[c] + fn[c])
        ppv = _ratio(tp[c], tp[c] + fp[c])
    else:
        sen = _defined_mean(_ratio(a, a + b) for a, b in zip(tp, fn))
        ppv = _defined_mean(_ratio(a, a + b) for a, b in zip(tp, fp))
    return MetricReport(oa, sen, ppv, f1_score(sen, ppv))


def evaluate(true_labels, pred_labels, positive_class=1, num_classes=None):
    return compute_metrics(confusion(true_labels, pred_labels, positive_class, num_classes))


def average_reports(reports):
    """Field-wise mean; a field is undefined if any report leaves it undefined"""
    fields = {}
    for name in METRIC_NAMES:
        values = [r.values()[name] for r in reports]
        if not values or any(v is None for v in values):
            fields[name] = None
        else:
            fields[name] = float(np.mean(values))
    return MetricReport(fields["OA"], fields["Sen"], fields["PPV"], fields["F1"])


def format_value(value):
    return "n/a" if value is None else f"{value:.{DISPLAY_DIGITS}f}"


def format_table(rows, first_column="Method"):
    """Plain text table of ``[(label, MetricReport), ...]``"""
    width = max([len(first_column)] + [len(str(label)) for label, _ in rows])
    lines = [
        f"{first_column:<{width}}  " + "  ".join(f"{name:>6}" for name in METRIC_NAMES)
    ]
    for label, report in rows:
        lines.append(
            f"{str(label):<{width}}  "
            + "  ".join(f"{format_value(v):>6}" for v in report.values().values())
        )
    return "\n".join(lines) + "\n"
