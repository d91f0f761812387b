"""Multi-branch training: train a branch, hand its parameters and attention
maps to the next one, fuse all branch predictions by majority vote.

Scale ``s`` (1-based) trains on the images of scale ``s - 1`` plus
``lambdas[s-1]`` times each image's normalized, upsampled attention map from
scale ``s - 1``. Scale 1 always sees the raw images.
"""
import numpy as np

from .attention import enhance_image, image_attention
from .backbone import (
    clone_into_next_branch,
    feature_extract,
    head_logits,
    init_backbone,
    spec_from_config,
)
from .exceptions import ArgumentError, ConfigError, NumericError, ShapeError, TrainingError
from .layers import PROBABILITY_FLOOR, _softmax_values, softmax_cross_entropy
from .metrics import average_reports, evaluate, format_value
from .optim import SGD
from .util import pool_map, scale_name

PRECISIONS = {"float32": np.float32, "float64": np.float64}
SWEEP_LAMBDAS = (1e-5, 1e-4, 1e-3, 1e-2)

DEFAULTS = {
    "scales": 3,
    "lambda": 1e-3,
    "lr": 1e-4,
    "momentum": 0.99,
    "weight_decay": 1e-2,
    "seed": 0,
    "backbone": "desk",
    "eval_fraction": 0.3,
    "positive_class": 1,
    "precision": "float32",
    "verbose": False,
}

PROFILES = {
    "desk": {"epochs": 20, "image_size": 32, "batch_size": 32},
    "paper": {"epochs": 100, "image_size": 256, "batch_size": 32},
}

CONFIG_KEYS = tuple(DEFAULTS) + tuple(PROFILES["desk"])


def profile_defaults(profile):
    if profile not in PROFILES:
        raise ConfigError("profile", f"unknown profile '{profile}', known: {sorted(PROFILES)}")
    result = dict(DEFAULTS)
    result.update(PROFILES[profile])
    return result


def _is_int(value):
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(
        value, bool
    )


class PipelineConfig:
    """Hyperparameters of one multi-branch run.

    ``lambda_`` is either one weight (scale 1 gets 0, every later scale the
    weight) or a list with one weight per scale whose first entry is 0.
    """

    def __init__(
        self,
        scales=DEFAULTS["scales"],
        lambda_=DEFAULTS["lambda"],
        epochs=PROFILES["desk"]["epochs"],
        lr=DEFAULTS["lr"],
        momentum=DEFAULTS["momentum"],
        weight_decay=DEFAULTS["weight_decay"],
        batch_size=PROFILES["desk"]["batch_size"],
        image_size=PROFILES["desk"]["image_size"],
        seed=DEFAULTS["seed"],
        backbone=DEFAULTS["backbone"],
        eval_fraction=DEFAULTS["eval_fraction"],
        positive_class=DEFAULTS["positive_class"],
        precision=DEFAULTS["precision"],
        verbose=DEFAULTS["verbose"],
    ):
        self.scales = scales
        self.lambda_ = list(lambda_) if isinstance(lambda_, (list, tuple)) else lambda_
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.image_size = image_size
        self.seed = seed
        self.backbone = backbone
        self.eval_fraction = eval_fraction
        self.positive_class = positive_class
        self.precision = precision
        self.verbose = verbose
        self.validate()

    def validate(self):
        if not _is_int(self.scales) or self.scales < 1:
            raise ConfigError("scales", f"must be an integer >= 1, got {self.scales!r}")
        if isinstance(self.lambda_, list):
            if len(self.lambda_) != self.scales:
                raise ConfigError(
                    "lambda", f"needs {self.scales} entries, got {len(self.lambda_)}"
                )
            if self.lambda_ and self.lambda_[0] != 0:
                raise ConfigError("lambda", "the first scale's weight must be 0")
            values = self.lambda_
        else:
            values = [self.lambda_]
        for v in values:
            if not _is_number(v) or v < 0 or not np.isfinite(v):
                raise ConfigError("lambda", f"weights must be finite and >= 0, got {v!r}")
        if not _is_int(self.epochs) or self.epochs < 0:
            raise ConfigError("epochs", f"must be an integer >= 0, got {self.epochs!r}")
        if not _is_number(self.lr) or not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr!r}")
        if not _is_number(self.momentum) or not 0 <= self.momentum < 1:
            raise ConfigError("momentum", f"must be in [0, 1), got {self.momentum!r}")
        if not _is_number(self.weight_decay) or self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay!r}")
        for field in ("batch_size", "image_size"):
            value = getattr(self, field)
            if not _is_int(value) or value < 1:
                raise ConfigError(field, f"must be an integer >= 1, got {value!r}")
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError("seed", f"must be an integer >= 0, got {self.seed!r}")
        if not isinstance(self.backbone, (str, dict)):
            raise ConfigError("backbone", "must be a preset name or a mapping")
        # channel and class counts come from the data; extents only need image_size
        try:
            spec_from_config(self.backbone, (1, self.image_size, self.image_size), 2, 0)
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError("backbone", str(e)) from e
        if not _is_number(self.eval_fraction) or not 0 < self.eval_fraction < 1:
            raise ConfigError(
                "eval_fraction", f"must be in (0, 1), got {self.eval_fraction!r}"
            )
        if not _is_int(self.positive_class) or self.positive_class < 0:
            raise ConfigError(
                "positive_class", f"must be an integer >= 0, got {self.positive_class!r}"
            )
        if self.precision not in PRECISIONS:
            raise ConfigError(
                "precision", f"must be one of {sorted(PRECISIONS)}, got {self.precision!r}"
            )
        if not isinstance(self.verbose, bool):
            raise ConfigError("verbose", f"must be true or false, got {self.verbose!r}")

    @property
    def lambdas(self):
        """One weight per scale, index 0 (scale 1) always 0"""
        if isinstance(self.lambda_, list):
            return [float(x) for x in self.lambda_]
        return [0.0] + [float(self.lambda_)] * (self.scales - 1)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self):
        d = {
            "scales": self.scales,
            "lambda": self.lambda_,
            "epochs": self.epochs,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "image_size": self.image_size,
            "seed": self.seed,
            "backbone": self.backbone,
            "eval_fraction": self.eval_fraction,
            "positive_class": self.positive_class,
            "precision": self.precision,
            "verbose": self.verbose,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        return cls(**d)

    def replace(self, **changes):
        """Copy with some fields changed; ``lambda`` may be passed as ``lambda_``"""
        d = self.to_dict()
        if "lambda_" in changes:
            changes["lambda"] = changes.pop("lambda_")
        if "scales" in changes and "lambda" not in changes and isinstance(d["lambda"], list):
            raise ConfigError("scales", "changing the scale count needs a matching lambda list")
        d.update(changes)
        return PipelineConfig.from_dict(d)

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return "PipelineConfig(%s)" % ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items())


class BranchModel:
    """One trained branch and its predictions.

    ``*_attention`` are the normalized maps at image resolution that feed the
    next scale's enhancement.
    """

    def __init__(self, params, scale, loss_history, train_probs, eval_probs=None):
        self.params = params
        self.scale = scale
        self.loss_history = list(loss_history)
        self.train_probs = train_probs
        self.eval_probs = eval_probs
        self.train_attention = None
        self.eval_attention = None
        self.final_loss = None

    @property
    def name(self):
        return scale_name(self.scale)

    @property
    def train_pred(self):
        return np.argmax(self.train_probs, axis=1)

    @property
    def eval_pred(self):
        if self.eval_probs is None:
            return None
        return np.argmax(self.eval_probs, axis=1)


class PipelineResult:
    def __init__(self, config, branches, eval_labels, eval_ids, fused_labels, tie_breaks):
        self.config = config
        self.branches = branches
        self.eval_labels = eval_labels
        self.eval_ids = eval_ids
        self.fused_labels = fused_labels
        self.tie_breaks = tie_breaks
        self.scale_metrics = [self._metrics(b.eval_pred) for b in branches]
        self.fused_metrics = self._metrics(fused_labels)
        self.ablation = None

    def _metrics(self, predictions):
        num_classes = self.branches[0].params.spec.num_classes
        return evaluate(
            self.eval_labels, predictions, self.config.positive_class, num_classes
        )

    def rows(self):
        """[(row name, MetricReport)] for every scale plus the fused prediction"""
        result = [(b.name, m) for b, m in zip(self.branches, self.scale_metrics)]
        result.append(("AMEN", self.fused_metrics))
        return result


def _loss_at(probs, labels):
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROBABILITY_FLOOR))))


def branch_forward(params, images, batch_size, attention=True):
    """Class probabilities ``[N, M]`` and, optionally, attention maps ``[N, H, W]``"""
    frozen = params.copy().requires_grad_(False)
    images = np.asarray(images)
    height, width = images.shape[-2:]
    probs = []
    maps = []
    for start in range(0, len(images), batch_size):
        F = feature_extract(images[start : start + batch_size], frozen)
        probs.append(_softmax_values(head_logits(F, frozen).values))
        if attention:
            maps.append(image_attention(F, (height, width)))
    num_classes = params.spec.num_classes
    probs = np.concatenate(probs) if probs else np.zeros((0, num_classes))
    if not attention:
        return probs, None
    maps = np.concatenate(maps) if maps else np.zeros((0, height, width))
    return probs, maps


def train_branch(dataset, init, config, scale=1, eval_dataset=None):
    """Mini-batch SGD on softmax cross-entropy, starting from a copy of ``init``.

    Mini-batch order per epoch comes from ``default_rng((seed + scale, epoch))``.
    """
    if len(dataset) == 0:
        raise ArgumentError("cannot train on an empty dataset")
    params = init.astype(config.dtype).requires_grad_(True)
    images = dataset.images.astype(config.dtype, copy=False)
    targets = dataset.onehot
    optimizer = SGD(
        params.named(), config.lr, config.momentum, config.weight_decay
    )
    n = len(dataset)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng((config.seed + scale, epoch)).permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            try:
                F = feature_extract(images[batch], params)
                loss = softmax_cross_entropy(head_logits(F, params), targets[batch])
                loss.backward()
            except NumericError as e:
                raise TrainingError(f"training diverged: {e}", epoch=epoch) from e
            running += loss.item() * len(batch)
            optimizer.step()
        epoch_loss = running / n
        if not np.isfinite(epoch_loss):
            raise TrainingError("training diverged: non-finite loss", epoch=epoch)
        history.append(epoch_loss)
        if config.verbose:
            print(f"  {scale_name(scale)} epoch {epoch}/{config.epochs} loss {epoch_loss:.6f}")
    params.requires_grad_(False)
    for t in optimizer.params.values():
        if not np.all(np.isfinite(t.values)):
            raise TrainingError("training diverged: non-finite parameters", epoch=config.epochs)

    train_probs, train_maps = branch_forward(params, images, config.batch_size)
    model = BranchModel(params, scale, history, train_probs)
    model.train_attention = train_maps
    model.final_loss = _loss_at(train_probs, dataset.labels)
    if eval_dataset is not None:
        eval_images = eval_dataset.images.astype(config.dtype, copy=False)
        model.eval_probs, model.eval_attention = branch_forward(
            params, eval_images, config.batch_size
        )
    return model


def _check_splits(train, eval_):
    if len(train) == 0 or len(eval_) == 0:
        raise ArgumentError("train and eval splits must both be nonempty")
    if train.image_shape != eval_.image_shape:
        raise ShapeError("train and eval images differ", train.image_shape, eval_.image_shape)
    if train.num_classes != eval_.num_classes:
        raise ArgumentError("train and eval splits disagree on the class count")


def run_pipeline(train, eval_, config):
    """Train ``config.scales`` branches in sequence and fuse them"""
    _check_splits(train, eval_)
    spec = spec_from_config(config.backbone, train.image_shape, train.num_classes, config.seed)
    x_train = train.images.astype(config.dtype)
    x_eval = eval_.images.astype(config.dtype)
    lambdas = config.lambdas
    branches = []
    previous = None
    for s in range(1, config.scales + 1):
        if previous is None:
            init = init_backbone(spec, config.seed)
        else:
            init = clone_into_next_branch(previous.params)
            x_train = enhance_image(x_train, previous.train_attention, lambdas[s - 1])
            x_eval = enhance_image(x_eval, previous.eval_attention, lambdas[s - 1])
        try:
            model = train_branch(
                train.with_images(x_train),
                init,
                config,
                scale=s,
                eval_dataset=eval_.with_images(x_eval),
            )
        except TrainingError as e:
            raise e.with_scale(s)
        oa = evaluate(eval_.labels, model.eval_pred, config.positive_class, spec.num_classes).oa
        print(
            f"{model.name}: {config.epochs} epochs, loss {model.final_loss:.4f}, "
            f"eval OA {format_value(oa)}"
        )
        branches.append(model)
        previous = model
    fused, tie_breaks = vote_details(
        [b.eval_pred for b in branches], [b.eval_probs for b in branches]
    )
    return PipelineResult(config, branches, eval_.labels, eval_.ids, fused, tie_breaks)


def vote_details(per_branch_labels, per_branch_probs):
    """Majority vote plus the number of samples that needed the probability tie-break"""
    labels = np.asarray(per_branch_labels, dtype=np.int64)
    probs = np.asarray(per_branch_probs, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise ShapeError("need a [branches, samples] label array", labels.shape)
    if probs.ndim != 3 or probs.shape[:2] != labels.shape:
        raise ShapeError("label and probability arrays do not match", labels.shape, probs.shape)
    num_classes = probs.shape[2]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ArgumentError(f"votes outside [0, {num_classes})")
    counts = np.zeros((labels.shape[1], num_classes), dtype=np.int64)
    for branch in labels:
        counts[np.arange(labels.shape[1]), branch] += 1
    tied = counts == counts.max(axis=1, keepdims=True)
    # sorted along the branch axis so the sum does not depend on branch order
    summed = np.sort(probs, axis=0).sum(axis=0)
    fused = np.argmax(np.where(tied, summed, -np.inf), axis=1)
    tie_breaks = int((tied.sum(axis=1) > 1).sum())
    return fused, tie_breaks


def majority_vote(per_branch_labels, per_branch_probs):
    """Per sample the most frequent label; ties go to the highest summed
    probability, remaining ties to the lowest class index."""
    return vote_details(per_branch_labels, per_branch_probs)[0]


class AblationResult:
    def __init__(self, seeds, repeat_metrics, average, boosting, pipeline_result):
        self.seeds = seeds
        self.repeat_metrics = repeat_metrics
        self.average = average
        self.boosting = boosting
        self.pipeline_result = pipeline_result

    def rows(self):
        return [("Average", self.average), ("Boosting", self.boosting)] + (
            self.pipeline_result.rows()
        )


def _single_branch(job):
    train, eval_, config = job
    model = run_pipeline(train, eval_, config).branches[0]
    return model.eval_pred, model.eval_probs


def run_ablation(train, eval_, config, repeats=3, seeds=None, pipeline_result=None):
    """Independent single-branch runs on raw images, averaged and vote-fused,
    next to the per-scale and fused rows of a full run."""
    if seeds is None:
        if repeats < 2:
            raise ArgumentError(f"ablation needs at least 2 repeats, got {repeats}")
        seeds = [config.seed + k for k in range(repeats)]
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ArgumentError(f"ablation needs at least 2 repeats, got {len(seeds)}")
    _check_splits(train, eval_)
    jobs = [(train, eval_, config.replace(seed=seed, scales=1, lambda_=0.0)) for seed in seeds]
    outcomes = pool_map(_single_branch, jobs)
    num_classes = train.num_classes
    repeat_metrics = []
    for seed, (pred, _) in zip(seeds, outcomes):
        report = evaluate(eval_.labels, pred, config.positive_class, num_classes)
        print(f"Repeat seed {seed}: eval OA {format_value(report.oa)}")
        repeat_metrics.append(report)
    boosted = majority_vote([p for p, _ in outcomes], [q for _, q in outcomes])
    boosting = evaluate(eval_.labels, boosted, config.positive_class, num_classes)
    if pipeline_result is None:
        pipeline_result = run_pipeline(train, eval_, config)
    return AblationResult(
        seeds, repeat_metrics, average_reports(repeat_metrics), boosting, pipeline_result
    )


def _sweep_point(job):
    train, eval_, config = job
    return run_pipeline(train, eval_, config)


def sweep_lambda(train, eval_, config, lambdas=SWEEP_LAMBDAS):
    """One full run per lambda (applied to every scale after the first)"""
    jobs = [(train, eval_, config.replace(lambda_=float(lam))) for lam in lambdas]
    results = pool_map(_sweep_point, jobs)
    for lam, result in zip(lambdas, results):
        print(f"lambda {lam:g}: fused OA {format_value(result.fused_metrics.oa)}")
    return list(zip(lambdas, results))


def infer_chain(branch_params, dataset, config):
    """Replay the enhancement chain with stored branch parameters.

    Returns one ``(probs, attention maps)`` pair per scale.
    """
    if len(branch_params) != config.scales:
        raise ArgumentError(
            f"config has {config.scales} scales but {len(branch_params)} branches were given"
        )
    images = dataset.images.astype(config.dtype)
    lambdas = config.lambdas
    outputs = []
    for s, params in enumerate(branch_params, 1):
        if outputs:
            images = enhance_image(images, outputs[-1][1], lambdas[s - 1])
        outputs.append(branch_forward(params.astype(config.dtype), images, config.batch_size))
    return outputs
