"""Scene-coordinate regressors and their training loop.

Two trainable models stand in for the dense coordinate network at desk
scale: ``PatchMLP`` maps per-point appearance descriptors to world
coordinates through a small tanh network, and ``FreeTable`` gives every
(image, point) observation its own free 3-vector, isolating the geometry of
each loss from any appearance coupling. Training is plain Adam, one image
per iteration, fully deterministic given the config seed.

Non-finite losses or gradients are counted and applied as-is, never
repaired: under the plain reprojection loss they are part of the behavior
under study.
"""

from __future__ import annotations

import csv
import enum
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from anglereloc.geometry import (
    CameraIntrinsics,
    DepthStatus,
    PoseSE3,
    depth_statuses,
    ray_vectors,
)
from anglereloc.losses import (
    LossConfig,
    PredictionGrid,
    angle_terms,
    combined_loss,
    image_loss,
    multiview_image_loss,
    photometric_image_loss,
    reproj_terms,
    LossMode,
)


class ConfigError(Exception):
    """Inconsistent training configuration for the given dataset."""


class DimensionMismatchError(Exception):
    pass


class TrainMode(enum.Enum):
    REPROJ = "reproj"
    ANGLE = "angle"
    ANGLE_MULTI = "angle-multi"
    ANGLE_PHOTO = "angle-photo"
    CONST_DEPTH_REPROJ = "const-depth-reproj"


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class PatchMLP:
    """Fully-connected tanh network from descriptors to 3D coordinates.

    Weights are stored as (fan_in, fan_out) matrices; hidden layers use
    tanh, the output layer is linear.
    """

    kind = "patch_mlp"

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if self.weights[-1].shape[1] != 3:
            raise DimensionMismatchError("output layer must produce 3 values")

    @classmethod
    def init(cls, layer_sizes=(16, 64, 64, 3), seed=0):
        """Uniform [-0.5, 0.5] weights scaled by 1/sqrt(fan_in), zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(
                rng.uniform(-0.5, 0.5, size=(fan_in, fan_out)) / np.sqrt(fan_in)
            )
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    def forward(self, x):
        """Evaluate the network on (N, in) descriptors -> (N, 3)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"descriptor length {x.shape[1]} != input layer {self.input_dim}"
            )
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_cached(self, x):
        """Forward pass keeping activations for the backward pass."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"descriptor length {x.shape[1]} != input layer {self.input_dim}"
            )
        acts = [x]
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        return h @ self.weights[-1] + self.biases[-1], acts

    def backward(self, acts, upstream):
        """Gradients of sum(upstream * output) w.r.t. every parameter.

        ``acts`` comes from ``forward_cached``; returns a parameter list in
        ``param_list`` order.
        """
        g = np.asarray(upstream, dtype=np.float64)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grads_w[-1] = acts[-1].T @ g
        grads_b[-1] = g.sum(axis=0)
        g = g @ self.weights[-1].T
        for layer in range(len(self.weights) - 2, -1, -1):
            g = g * (1.0 - acts[layer + 1] ** 2)  # tanh'
            grads_w[layer] = acts[layer].T @ g
            grads_b[layer] = g.sum(axis=0)
            if layer > 0:
                g = g @ self.weights[layer].T
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend([gw, gb])
        return out

    # training-loop interface -------------------------------------------------

    def param_list(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def set_param_list(self, params):
        self.weights = list(params[0::2])
        self.biases = list(params[1::2])

    def predict_image(self, dataset, image_id):
        obs = dataset.observations[image_id]
        y, acts = self.forward_cached(obs.descriptors)
        return y, acts

    def grads_for_image(self, ctx, dl_dy):
        return self.backward(ctx, dl_dy)

    def state_dict(self):
        return {
            "kind": self.kind,
            "layer_sizes": [self.weights[0].shape[0]]
            + [w.shape[1] for w in self.weights],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_state(cls, state):
        return cls(state["weights"], state["biases"])


class FreeTable:
    """One free 3-vector per (image, point) observation; the ablation model
    with no appearance coupling at all."""

    kind = "free_table"

    def __init__(self, coords, index):
        self.coords = np.asarray(coords, dtype=np.float64)
        self.index = index  # (image_id, point_id) -> row

    @classmethod
    def init(cls, dataset, seed=0):
        """Entries uniform in the scene bounding box expanded 2x about its
        center (bounding box taken over all ground-truth coordinates)."""
        rng = np.random.default_rng(seed)
        all_gt = np.concatenate([o.gt_coords for o in dataset.observations.values()])
        lo, hi = all_gt.min(axis=0), all_gt.max(axis=0)
        center, half = (lo + hi) / 2, (hi - lo) / 2
        index = {}
        rows = 0
        for image_id in sorted(dataset.observations):
            for k in dataset.observations[image_id].point_ids:
                index[(image_id, int(k))] = rows
                rows += 1
        coords = rng.uniform(center - 2 * half, center + 2 * half, size=(rows, 3))
        return cls(coords, index)

    def rows_for_image(self, dataset, image_id):
        obs = dataset.observations[image_id]
        return np.array([self.index[(image_id, int(k))] for k in obs.point_ids])

    def param_list(self):
        return [self.coords]

    def set_param_list(self, params):
        (self.coords,) = params

    def predict_image(self, dataset, image_id):
        rows = self.rows_for_image(dataset, image_id)
        return self.coords[rows], rows

    def grads_for_image(self, ctx, dl_dy):
        g = np.zeros_like(self.coords)
        g[ctx] = dl_dy
        return [g]

    def state_dict(self):
        return {
            "kind": self.kind,
            "coords": self.coords.tolist(),
            "index": [[i, k, r] for (i, k), r in sorted(self.index.items())],
        }

    @classmethod
    def from_state(cls, state):
        index = {(i, k): r for i, k, r in state["index"]}
        return cls(np.array(state["coords"]), index)


class GtLookup:
    """Oracle pseudo-model: predicts the recorded ground-truth coordinate."""

    kind = "gt_lookup"

    def predict_image(self, dataset, image_id):
        return dataset.observations[image_id].gt_coords.copy(), None

    def param_list(self):
        return []

    def state_dict(self):
        return {"kind": self.kind}

    @classmethod
    def from_state(cls, state):
        return cls()


class ConstantModel:
    """Degenerate pseudo-model emitting one fixed coordinate everywhere."""

    kind = "constant"

    def __init__(self, value=(0.0, 0.0, 0.0)):
        self.value = np.asarray(value, dtype=np.float64)

    def predict_image(self, dataset, image_id):
        n = len(dataset.observations[image_id].point_ids)
        return np.tile(self.value, (n, 1)), None

    def param_list(self):
        return []

    def state_dict(self):
        return {"kind": self.kind, "value": self.value.tolist()}

    @classmethod
    def from_state(cls, state):
        return cls(state["value"])


MODEL_KINDS = {
    "patch_mlp": PatchMLP,
    "free_table": FreeTable,
    "gt_lookup": GtLookup,
    "constant": ConstantModel,
}


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(state: AdamState, params, grads):
    """One Adam update; returns (new_params, state). The state's moment
    arrays are replaced, not mutated, so snapshots stay valid."""
    if len(params) != len(grads) or any(
        p.shape != g.shape for p, g in zip(params, grads)
    ):
        raise DimensionMismatchError("parameter/gradient shapes disagree")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params = []
    new_m, new_v = [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    state.m, state.v = new_m, new_v
    return new_params, state


# ---------------------------------------------------------------------------
# Constant-depth initialization targets
# ---------------------------------------------------------------------------


def constant_depth_targets(
    intr: CameraIntrinsics, pose: PoseSE3, observations, d: float
):
    """Dummy scene coordinates at camera-frame depth ``d`` along each
    observation's viewing ray; the initialization baseline's regression
    targets."""
    if not d > 0:
        raise ValueError("constant depth d must be positive")
    rays = ray_vectors(intr, observations.pixels)
    cam = rays * (d / intr.f)  # third component becomes exactly d
    return pose.camera_to_world(cam)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    mode: str = TrainMode.ANGLE.value
    iterations: int = 20000
    lr: float = 1e-4
    lr_halving_fractions: tuple = (0.6, 0.8, 0.9)
    lambda_multiview: float = 60.0
    lambda_photo: float = 20.0
    alpha_ssim: float = 0.85
    epsilon_norm: float = 1e-8
    const_depth: float = 3.0
    init_fraction: float = 0.25
    seed: int = 0
    jitter_pixels: bool = False
    checkpoint_every: int = 500
    hidden_sizes: tuple = (64, 64)
    photo_neighbor_max_offset: int = 10

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.mode == TrainMode.CONST_DEPTH_REPROJ.value and not self.const_depth > 0:
            raise ConfigError("const_depth must be positive for the init mode")
        TrainMode(self.mode)  # validates the mode string

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda_multiview=self.lambda_multiview,
            lambda_photo=self.lambda_photo,
            alpha_ssim=self.alpha_ssim,
            epsilon_norm=self.epsilon_norm,
        )


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    behind_frac: float
    nonfinite_events: int
    median_err: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    CSV_COLUMNS = ("iter", "loss", "behind_frac", "nonfinite_events", "median_err", "seconds")

    def append(self, rec: TrainRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration numbers must increase")
        self.records.append(rec)

    @property
    def final(self) -> TrainRecord:
        return self.records[-1]

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for r in self.records:
                w.writerow(
                    [
                        r.iteration,
                        repr(float(r.loss)),
                        repr(float(r.behind_frac)),
                        r.nonfinite_events,
                        repr(float(r.median_err)),
                        f"{r.seconds:.3f}",
                    ]
                )

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with Path(path).open() as fh:
            for row in csv.DictReader(fh):
                log.append(
                    TrainRecord(
                        int(row["iter"]),
                        float(row["loss"]),
                        float(row["behind_frac"]),
                        int(row["nonfinite_events"]),
                        float(row["median_err"]),
                        float(row["seconds"]),
                    )
                )
        return log


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Piecewise-constant schedule: halve at each configured fraction."""
    frac = iteration / cfg.iterations
    halvings = sum(1 for f in cfg.lr_halving_fractions if frac >= f)
    return cfg.lr * (0.5**halvings)


def _photo_neighbor(train_ids, image_id, max_offset, rng):
    cands = [j for j in train_ids if j != image_id and abs(j - image_id) <= max_offset]
    if not cands:
        return None
    return cands[int(rng.integers(len(cands)))]


def make_model(model_kind: str, dataset, cfg: TrainConfig):
    if model_kind == "patch_mlp":
        sizes = (dataset.config.descriptor_dim, *cfg.hidden_sizes, 3)
        return PatchMLP.init(sizes, seed=[cfg.seed, 12])
    if model_kind == "free_table":
        return FreeTable.init(dataset, seed=[cfg.seed, 12])
    if model_kind == "gt_lookup":
        return GtLookup()
    if model_kind == "constant":
        return ConstantModel()
    raise ConfigError(f"unknown model kind {model_kind!r}")


def train(dataset, model_kind: str, cfg: TrainConfig):
    """Optimize a model on the dataset's training views under ``cfg.mode``.

    One training image per iteration (drawn uniformly with the config seed),
    per-point gradients from the selected loss accumulated into the model by
    Adam. Returns ``(model, TrainLog)``; the log records loss, behind-camera
    fraction, the running count of non-finite loss/gradient events, the
    median 3D coordinate error over the training views, and wall time.
    """
    mode = TrainMode(cfg.mode)
    if mode is TrainMode.ANGLE_PHOTO and not dataset.images:
        raise ConfigError("angle-photo training needs rendered images")
    if model_kind not in ("patch_mlp", "free_table"):
        raise ConfigError(f"model kind {model_kind!r} is not trainable")
    loss_cfg = cfg.loss_config()
    model = make_model(model_kind, dataset, cfg)
    params = model.param_list()
    adam = AdamState.for_params(params, lr=cfg.lr)
    train_ids = list(dataset.train_ids)
    intr = dataset.intrinsics
    order_rng = np.random.default_rng([cfg.seed, 11])
    image_order = order_rng.integers(0, len(train_ids), size=cfg.iterations)

    log = TrainLog()
    nonfinite_events = 0
    behind_frac = 0.0
    total = float("nan")
    start = time.perf_counter()

    def record(iteration):
        med, _ = evaluate_coords(model, dataset, train_ids)
        log.append(
            TrainRecord(
                iteration,
                total,
                behind_frac,
                nonfinite_events,
                med,
                time.perf_counter() - start,
            )
        )

    init_cutoff = (
        int(cfg.init_fraction * cfg.iterations)
        if mode is TrainMode.CONST_DEPTH_REPROJ
        else 0
    )

    for t in range(cfg.iterations):
        image_id = train_ids[int(image_order[t])]
        obs = dataset.observations[image_id]
        pose = dataset.poses[image_id]
        pixels = obs.pixels
        if cfg.jitter_pixels:
            jit_rng = np.random.default_rng([cfg.seed, 13, t])
            pixels = pixels + jit_rng.uniform(-1.0, 1.0, size=pixels.shape)

        preds, ctx = model.predict_image(dataset, image_id)

        if mode is TrainMode.REPROJ or (
            mode is TrainMode.CONST_DEPTH_REPROJ and t >= init_cutoff
        ):
            values, grads, statuses, _ = reproj_terms(intr, pose, preds, pixels)
        elif mode is TrainMode.CONST_DEPTH_REPROJ:
            targets = constant_depth_targets(intr, pose, obs, cfg.const_depth)
            diff = preds - targets
            values = np.sum(diff * diff, axis=1)
            grads = 2.0 * diff
            statuses = depth_statuses(pose.world_to_camera(preds)[:, 2])
        elif mode is TrainMode.ANGLE:
            values, grads, statuses, _ = angle_terms(
                intr, pose, preds, pixels, cfg.epsilon_norm
            )
        elif mode is TrainMode.ANGLE_MULTI:
            rep = multiview_image_loss(
                intr,
                dataset.poses,
                image_id,
                PredictionGrid(obs.point_ids, preds),
                dataset.observations,
                dataset.covis,
                loss_cfg,
                np.random.default_rng([cfg.seed, t, image_id]),
            )
            values, grads, statuses = rep.values, rep.grads, rep.statuses
        elif mode is TrainMode.ANGLE_PHOTO:
            values, grads, statuses, _ = angle_terms(
                intr, pose, preds, pixels, cfg.epsilon_norm
            )
            nb_rng = np.random.default_rng([cfg.seed, t, image_id])
            j = _photo_neighbor(
                train_ids, image_id, cfg.photo_neighbor_max_offset, nb_rng
            )
            if j is not None:
                photo = photometric_image_loss(
                    intr,
                    dataset.poses[j],
                    PredictionGrid(obs.point_ids, preds),
                    obs,
                    dataset.images[image_id].data,
                    dataset.images[j].data,
                    loss_cfg,
                )
                values = values + cfg.lambda_photo * photo.values
                grads = grads + cfg.lambda_photo * photo.grads
        else:  # pragma: no cover
            raise ConfigError(f"unhandled mode {mode}")

        finite_vals = np.isfinite(values)
        total = float(np.sum(values[finite_vals]))
        behind_frac = float(np.mean(statuses == int(DepthStatus.BEHIND)))
        if not (np.all(finite_vals) and np.all(np.isfinite(grads))):
            nonfinite_events += 1

        model_grads = model.grads_for_image(ctx, grads)
        adam.lr = lr_at(cfg, t)
        params, adam = adam_step(adam, params, model_grads)
        model.set_param_list(params)

        if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
            record(t + 1)

    if not log.records or log.final.iteration != cfg.iterations:
        record(cfg.iterations)
    return model, log


def evaluate_coords(model, dataset, image_ids=None):
    """(median, mean) 3D error of predictions against ground truth over the
    observations of the given images (all images by default)."""
    ids = list(image_ids) if image_ids is not None else sorted(dataset.observations)
    errs = []
    for image_id in ids:
        preds, _ = model.predict_image(dataset, image_id)
        gt = dataset.observations[image_id].gt_coords
        errs.append(np.linalg.norm(preds - gt, axis=1))
    errs = np.concatenate(errs)
    with np.errstate(invalid="ignore"):
        return float(np.median(errs)), float(np.mean(errs))


def predict_correspondences(model, dataset, image_id):
    """(point_ids, pixels, predicted coords) for one image: the input to the
    pose solver."""
    obs = dataset.observations[image_id]
    preds, _ = model.predict_image(dataset, image_id)
    return obs.point_ids.copy(), obs.pixels.copy(), preds


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, cfg: TrainConfig):
    blob = {
        "schema_version": CHECKPOINT_VERSION,
        "train_config": asdict(cfg),
        "model": model.state_dict(),
    }
    Path(path).write_text(json.dumps(blob) + "\n")


def load_checkpoint(path):
    blob = json.loads(Path(path).read_text())
    if blob.get("schema_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {blob.get('schema_version')}")
    state = blob["model"]
    kind = state.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r} in checkpoint")
    model = MODEL_KINDS[kind].from_state(state)
    raw = blob["train_config"]
    raw["lr_halving_fractions"] = tuple(raw["lr_halving_fractions"])
    raw["hidden_sizes"] = tuple(raw["hidden_sizes"])
    return model, TrainConfig(**raw)
