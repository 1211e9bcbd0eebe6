"""SGD training loop: momentum 0.95, gradient clipping at 0.5, learning
rate annealed by 10 on validation plateau (at most 3 times), atomic
checkpointing with full resume state, append-only CSV metrics log.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, get_default_dtype, mse_half, no_grad, set_default_dtype
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Corpus, batch_arrays, sample_pairs
from .errors import ConfigurationError, NumericError
from .layers import ParamStore
from .models import build_model, model_from_manifest

MOMENTUM = 0.95
CLIP_LIMIT = 0.5
LR_DECAY_FACTOR = 10.0
MAX_LR_DECAYS = 3


@dataclass
class RunConfig:
    model: str = "dsrn"
    scale: int = 2
    t_steps: int = 7
    width: int = 128
    width_in: int = 0          # 0 means width // 2
    feedback: bool = True
    tied: bool = True
    dual: bool = True
    lr0: float = 0.01
    batch: int = 16
    patch: int = 128
    steps: int = 2000
    seed: int = 0
    clip_mode: str = "value"
    data_root: str = "."
    train_manifest: str = ""
    val_batch: int = 8
    val_interval: int = 100
    patience: int = 3
    min_improvement: float = 1e-5
    dtype: str = "float32"
    out_dir: str = "run_out"
    resume: str = ""

    def validate(self) -> "RunConfig":
        if self.model not in ("resnet", "drcn", "drrn", "dsrn"):
            raise ConfigurationError(f"config key 'model': unknown value {self.model!r}")
        if self.scale < 1:
            raise ConfigurationError(f"config key 'scale': must be >= 1, got {self.scale}")
        if self.t_steps < 1:
            raise ConfigurationError(f"config key 'T': must be >= 1, got {self.t_steps}")
        if self.lr0 <= 0:
            raise ConfigurationError(f"config key 'lr0': must be positive, got {self.lr0}")
        if self.clip_mode not in ("value", "norm"):
            raise ConfigurationError(
                f"config key 'clip_mode': expected 'value' or 'norm', got {self.clip_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(
                f"config key 'dtype': expected 'float32' or 'float64', got {self.dtype!r}")
        for key in ("width", "batch", "patch", "steps", "val_batch", "val_interval",
                    "patience"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"config key {key!r}: must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# config-file key -> RunConfig field (T is the conventional name for the
# unrolling length)
_KEY_ALIASES = {"T": "t_steps", "t": "t_steps"}


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"config key {field.name!r}: not a boolean: {raw!r}")
    caster = {"int": int, "float": float, "str": str}[field.type if isinstance(field.type, str) else field.type.__name__]
    try:
        return caster(raw.strip())
    except ValueError:
        raise ConfigurationError(f"config key {field.name!r}: cannot parse {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        name = _KEY_ALIASES.get(key, key)
        if name not in fields:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        out[name] = _coerce(fields[name], raw)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    if overrides:
        fields = {f.name: f for f in dataclasses.fields(RunConfig)}
        for key, val in overrides.items():
            name = _KEY_ALIASES.get(key, key)
            if name not in fields:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[name] = _coerce(fields[name], str(val)) if isinstance(val, str) else val
    return RunConfig(**values).validate()


def clip_gradients(params: ParamStore, mode: str = "value",
                   limit: float = CLIP_LIMIT) -> None:
    if mode == "value":
        for t in params.tensors():
            np.clip(t.grad, -limit, limit, out=t.grad)
    elif mode == "norm":
        total = 0.0
        for t in params.tensors():
            total += float(np.sum(np.square(t.grad, dtype=np.float64)))
        norm = np.sqrt(total)
        if norm > limit:
            factor = limit / norm
            for t in params.tensors():
                t.grad *= t.grad.dtype.type(factor)
    else:
        raise ConfigurationError(f"unknown clip mode {mode!r}")


class SgdMomentum:
    def __init__(self, params: ParamStore, lr: float, momentum: float = MOMENTUM):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, step_index: int = -1) -> None:
        for name, t in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= t.data.dtype.type(self.lr) * t.grad
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite update for {name!r} at step {step_index}")
            t.data += v
        self.params.zero_grads()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"opt." + name: v for name, v in self.velocity.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.velocity:
            key = "opt." + name
            if key not in arrays:
                raise ConfigurationError(f"checkpoint missing optimizer state {key!r}")
            self.velocity[name][...] = arrays[key]


class PlateauSchedule:
    """Divide lr by 10 after `patience` validations without an improvement
    of at least `min_improvement`, at most `max_decays` times."""

    def __init__(self, lr0: float, patience: int = 3, min_improvement: float = 1e-5,
                 factor: float = LR_DECAY_FACTOR, max_decays: int = MAX_LR_DECAYS):
        self.lr = lr0
        self.patience = patience
        self.min_improvement = min_improvement
        self.factor = factor
        self.max_decays = max_decays
        self.best = float("inf")
        self.bad_count = 0
        self.decays = 0

    def observe(self, val_loss: float) -> bool:
        """Returns True when this observation triggered a decay."""
        if val_loss < self.best - self.min_improvement:
            self.best = val_loss
            self.bad_count = 0
            return False
        self.bad_count += 1
        if self.bad_count >= self.patience and self.decays < self.max_decays:
            self.lr /= self.factor
            self.decays += 1
            self.bad_count = 0
            return True
        return False

    def state(self) -> dict:
        return {"lr": self.lr, "best": self.best, "bad_count": self.bad_count,
                "decays": self.decays}

    def load_state(self, state: dict) -> None:
        self.lr = state["lr"]
        self.best = state["best"]
        self.bad_count = state["bad_count"]
        self.decays = state["decays"]


def _model_input(pairs_arrays, input_kind: str) -> np.ndarray:
    lr, up, _ = pairs_arrays
    return lr if input_kind == "lr" else up


def _psnr_unquantized(a: np.ndarray, b: np.ndarray, crop: int) -> float:
    if crop:
        a = a[..., crop:-crop, crop:-crop]
        b = b[..., crop:-crop, crop:-crop]
    mse = float(np.mean(np.square(a - b, dtype=np.float64)))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _validate_model(model, val_arrays, crop: int) -> tuple[float, float]:
    lr, up, res = val_arrays
    with no_grad():
        out = model.forward(Tensor(_model_input(val_arrays, model.input_kind)))
    pred = out.residual.data
    loss = 0.5 * float(np.mean(np.square(pred - res, dtype=np.float64)))
    sr = np.clip(up + pred, 0.0, 1.0)
    hr = up + res
    psnr = _psnr_unquantized(sr, hr, crop)
    return loss, psnr


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


class Trainer:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.dtype = np.float32 if config.dtype == "float32" else np.float64
        ss = np.random.SeedSequence(config.seed)
        init_seed, data_seed, val_seed = ss.spawn(3)
        prev = get_default_dtype()
        set_default_dtype(self.dtype)
        try:
            self.model = build_model(
                config.model, config.scale, config.t_steps, config.width,
                config.width_in or None, config.feedback, config.tied,
                config.dual, np.random.default_rng(init_seed))
        finally:
            set_default_dtype(prev)
        self.data_rng = np.random.default_rng(data_seed)
        self.val_rng = np.random.default_rng(val_seed)
        self.optimizer = SgdMomentum(self.model.params, config.lr0)
        self.schedule = PlateauSchedule(config.lr0, config.patience,
                                        config.min_improvement)
        self.step = 0
        self.best_val_loss = float("inf")

    # -- persistence ---------------------------------------------------

    def _manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "model": self.model.manifest(),
            "step": self.step,
            "best_val_loss": self.best_val_loss,
            "schedule": self.schedule.state(),
            "data_rng": _rng_state(self.data_rng),
            "clip_mode": self.config.clip_mode,
        }

    def save(self, path) -> None:
        arrays = dict(self.model.params.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        save_checkpoint(path, arrays, self._manifest())

    def load(self, path) -> None:
        arrays, manifest = load_checkpoint(path)
        model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
        self.model.params.load_state_arrays(model_arrays)
        self.optimizer.load_state_arrays(arrays)
        self.schedule.load_state(manifest["schedule"])
        self.optimizer.lr = self.schedule.lr
        self.step = int(manifest["step"])
        self.best_val_loss = float(manifest["best_val_loss"])
        self.data_rng = _restore_rng(manifest["data_rng"])

    # -- loop ----------------------------------------------------------

    def train(self) -> dict:
        cfg = self.config
        os.makedirs(cfg.out_dir, exist_ok=True)
        corpus = (Corpus.from_manifest(cfg.data_root, cfg.train_manifest)
                  if cfg.train_manifest else Corpus.from_dir(cfg.data_root))
        if cfg.resume:
            self.load(cfg.resume)
        # the fixed validation batch is drawn from a dedicated stream, so
        # it is identical whether or not the run was resumed
        val_pairs = sample_pairs(corpus, cfg.scale, cfg.patch, cfg.val_batch,
                                 self.val_rng)
        val_arrays = batch_arrays(val_pairs, self.dtype)

        csv_path = os.path.join(cfg.out_dir, "metrics.csv")
        mode = "a" if (cfg.resume and os.path.exists(csv_path)) else "w"
        csv = open(csv_path, mode, encoding="utf-8")
        if mode == "w":
            csv.write("step,lr,train_loss,val_psnr\n")

        last_path = os.path.join(cfg.out_dir, "last.ckpt")
        best_path = os.path.join(cfg.out_dir, "best.ckpt")
        train_loss = float("nan")
        last_val_psnr = float("nan")
        try:
            while self.step < cfg.steps:
                self.step += 1
                pairs = sample_pairs(corpus, cfg.scale, cfg.patch, cfg.batch,
                                     self.data_rng)
                arrays = batch_arrays(pairs, self.dtype)
                x = Tensor(_model_input(arrays, self.model.input_kind))
                target = Tensor(arrays[2])
                out = self.model.forward(x)
                loss = mse_half(out.residual, target)
                train_loss = float(loss.item())
                backward(loss)
                clip_gradients(self.model.params, cfg.clip_mode)
                self.optimizer.lr = self.schedule.lr
                self.optimizer.step(self.step)
                self.model.post_step()

                if self.step % cfg.val_interval == 0 or self.step == cfg.steps:
                    val_loss, val_psnr = _validate_model(self.model, val_arrays,
                                                         crop=cfg.scale)
                    last_val_psnr = val_psnr
                    self.schedule.observe(val_loss)
                    csv.write(f"{self.step},{self.schedule.lr:.10g},"
                              f"{train_loss:.10g},{val_psnr:.10g}\n")
                    csv.flush()
                    if val_loss < self.best_val_loss:
                        self.best_val_loss = val_loss
                        self.save(best_path)
                    self.save(last_path)
        except NumericError:
            # keep the last good state reachable for post-mortem resume
            self.save(last_path)
            csv.close()
            raise
        csv.close()
        self.save(last_path)
        if not os.path.exists(best_path):
            self.save(best_path)
        return {"step": self.step, "train_loss": train_loss,
                "val_psnr": last_val_psnr, "best_val_loss": self.best_val_loss,
                "out_dir": cfg.out_dir}


def train(config: RunConfig) -> dict:
    return Trainer(config).train()


def load_model_for_eval(checkpoint_path):
    """Rebuild a model from a checkpoint and load its weights."""
    arrays, manifest = load_checkpoint(checkpoint_path)
    model_manifest = manifest["model"]
    cfg = manifest.get("config", {})
    dtype = np.float32 if cfg.get("dtype", "float64") == "float32" else np.float64
    prev = get_default_dtype()
    set_default_dtype(dtype)
    try:
        model = model_from_manifest(model_manifest, np.random.default_rng(0))
    finally:
        set_default_dtype(prev)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    model.params.load_state_arrays(model_arrays)
    return model, manifest
