"""Multi-stage edge network: config, graph build, forward/backward,
receptive-field bookkeeping and weight/config serialization.

The backbone is a VGG-style stack of 3x3 conv stages with 2x2 pooling
between them.  Every tapped backbone conv feeds a 1x1 side conv; the
per-stage side features are summed elementwise, reduced to a single
logit map by a 1x1 conv, upsampled back to input resolution with a fixed
bilinear kernel and center-cropped.  A final 1x1 conv fuses the stage
logits into the fused edge map.
"""

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import ConvParams, ShapeError, Tensor

WEIGHT_MAGIC = b"RCFW"
WEIGHT_VERSION = 1


class SideMode(enum.Enum):
    ALL_CONVS = "all"
    LAST_CONV_ONLY = "last"
    NONE = "none"


@dataclass
class StageSpec:
    num_convs: int
    out_channels: int
    side_mode: SideMode = SideMode.ALL_CONVS
    pool_after: bool = True
    pool_stride: int = 2

    def __post_init__(self):
        if self.num_convs < 1:
            raise ValueError(f"num_convs must be >= 1, got {self.num_convs}")
        if self.out_channels < 1:
            raise ValueError(f"out_channels must be >= 1, got {self.out_channels}")
        if self.pool_stride < 1:
            raise ValueError(f"pool_stride must be >= 1, got {self.pool_stride}")
        if isinstance(self.side_mode, str):
            self.side_mode = SideMode(self.side_mode)


@dataclass
class NetworkConfig:
    stages: list
    fusion_enabled: bool = True
    dilation_stage5: int = 2
    pool4_stride: int = 1
    side_nonlinearity: bool = False
    side_channels: int = 21
    in_channels: int = 3
    init_std: float = 0.01
    mean_rgb: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("config needs at least one stage")
        if self.dilation_stage5 < 1 or self.pool4_stride < 1:
            raise ValueError("dilation_stage5 and pool4_stride must be >= 1")
        if self.side_channels < 1 or self.in_channels < 1:
            raise ValueError("channel counts must be positive")
        # the 4th stage's pool stride is owned by pool4_stride
        if len(self.stages) >= 4 and self.stages[3].pool_after:
            self.stages[3].pool_stride = self.pool4_stride
        self.mean_rgb = tuple(float(v) for v in self.mean_rgb)

    @property
    def base_channels(self):
        return tuple(s.out_channels for s in self.stages)

    def stage_dilation(self, index):
        """Conv dilation for stage `index` (0-based)."""
        if index == 4 and self.pool4_stride == 1:
            return self.dilation_stage5
        return 1

    def cumulative_strides(self):
        """Stride of the feature grid entering each stage."""
        strides = []
        s = 1
        for spec in self.stages:
            strides.append(s)
            if spec.pool_after:
                s *= spec.pool_stride
        return strides

    def min_input_size(self):
        """Smallest H (= W) for which every stage keeps >= 1 element."""
        need = 1
        for spec, s in zip(self.stages, self.cumulative_strides()):
            need = max(need, s)
            if spec.pool_after:
                need = max(need, s * 2)  # pool window must fit
        return need


@dataclass
class RFEntry:
    name: str
    rf_size: int
    stride: int


@dataclass
class SideOutputs:
    """Per-stage probability maps plus the fused map, all at input size."""
    stage_maps: list
    fused_map: object
    stage_logits: list
    fused_logit: object


def vgg16_rcf_config(pool4_stride=1, dilation_stage5=2, side_mode=None,
                     fusion_enabled=True, side_nonlinearity=False):
    """The 13-conv, 5-stage VGG16-derived config (no fc layers, no pool5).

    ``side_mode`` may be a list of 5 per-stage SideMode values to express
    the mixed side-branch variants; default is all-conv taps everywhere.
    """
    conv_counts = (2, 2, 3, 3, 3)
    channels = (64, 128, 256, 512, 512)
    if side_mode is None:
        side_mode = [SideMode.ALL_CONVS] * 5
    stages = []
    for i in range(5):
        stages.append(StageSpec(
            num_convs=conv_counts[i],
            out_channels=channels[i],
            side_mode=side_mode[i],
            pool_after=i < 4,
            pool_stride=2))
    return NetworkConfig(stages=stages, pool4_stride=pool4_stride,
                         dilation_stage5=dilation_stage5,
                         fusion_enabled=fusion_enabled,
                         side_nonlinearity=side_nonlinearity)


def tiny_rcf_config(base_channels=(8, 16, 32), num_convs=2, side_channels=8,
                    init_std="he", in_channels=3):
    """Small config for desk-scale experiments and tests."""
    stages = []
    for i, c in enumerate(base_channels):
        stages.append(StageSpec(
            num_convs=num_convs, out_channels=c,
            pool_after=i < len(base_channels) - 1))
    return NetworkConfig(stages=stages, side_channels=side_channels,
                         init_std=init_std, in_channels=in_channels)


def receptive_field_table(config, standard_pool4=False):
    """Receptive field and stride per layer.

    rf grows by (k - 1) * dilation * running_stride per conv/pool; the
    running stride multiplies at each strided layer.  With
    ``standard_pool4`` the table is computed for the unmodified backbone
    (all pools stride 2, no dilation, trailing pool present), matching
    the published VGG16 numbers.
    """
    entries = []
    rf = 1
    stride = 1
    for i, spec in enumerate(config.stages):
        dilation = 1 if standard_pool4 else config.stage_dilation(i)
        for c in range(spec.num_convs):
            rf += 2 * dilation * stride  # (k-1) = 2 for 3x3 convs
            entries.append(RFEntry(f"conv{i + 1}_{c + 1}", rf, stride))
        pool_here = spec.pool_after or standard_pool4
        if pool_here:
            pool_stride = 2 if standard_pool4 else spec.pool_stride
            rf += stride  # (k-1) = 1 for 2x2 pools
            stride *= pool_stride
            entries.append(RFEntry(f"pool{i + 1}", rf, stride))
    return entries


class Model:
    """A built network: parameter tensors plus forward/backward."""

    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = {}
        self._cache = None
        self.deconv_learnable = False

    def _add_param(self, name, array):
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), name=name)
        self.params[name] = t
        return t

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def parameter_count(self):
        return sum(int(np.prod(p.dims)) for p in self.parameters())

    # -- structure helpers -------------------------------------------------

    def _conv_params(self, prefix, stride=1, pad=0, dilation=1):
        return ConvParams(self.params[f"{prefix}/w"], self.params[f"{prefix}/b"],
                          stride=stride, pad=pad, dilation=dilation)

    def _tap_indices(self, spec):
        if spec.side_mode is SideMode.ALL_CONVS:
            return list(range(spec.num_convs))
        if spec.side_mode is SideMode.LAST_CONV_ONLY:
            return [spec.num_convs - 1]
        return []

    def side_stage_indices(self):
        return [i for i, s in enumerate(self.config.stages)
                if s.side_mode is not SideMode.NONE]

    # -- forward / backward ------------------------------------------------

    def forward(self, image, train=False):
        cfg = self.config
        n, c, h, w = image.dims
        if c != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels}-channel input, got {c}")
        min_size = cfg.min_input_size()
        if h < min_size or w < min_size:
            raise ShapeError(
                f"input ({h}, {w}) below minimum size {min_size} "
                f"required by the deepest stage")

        strides = cfg.cumulative_strides()
        cache = {"image": image, "stages": [], "hw": (h, w)}
        stage_logit_tensors = []
        x = image
        for i, spec in enumerate(cfg.stages):
            dilation = cfg.stage_dilation(i)
            sc = {"x_in": x, "convs": [], "taps": self._tap_indices(spec)}
            acts = []
            hcur = x
            for ci in range(spec.num_convs):
                p = self._conv_params(f"stage{i + 1}/conv{ci + 1}",
                                      pad=dilation, dilation=dilation)
                z = ops.conv2d(hcur, p)
                a = ops.relu(z)
                sc["convs"].append((hcur, z, a, p))
                acts.append(a)
                hcur = a

            logit_full = None
            if sc["taps"]:
                ms = []
                sc["side"] = []
                for ti in sc["taps"]:
                    p = self._conv_params(f"stage{i + 1}/side{ti + 1}")
                    m_pre = ops.conv2d(acts[ti], p)
                    m = ops.relu(m_pre) if cfg.side_nonlinearity else m_pre
                    sc["side"].append((acts[ti], m_pre, p))
                    ms.append(m)
                e = ops.eltwise_add(*ms)
                score_p = self._conv_params(f"stage{i + 1}/score")
                score = ops.conv2d(e, score_p)
                factor = strides[i]
                if factor > 1:
                    logit_full = ops.bilinear_upsample(score, factor, h, w)
                else:
                    logit_full = score
                sc["e"] = e
                sc["score"] = score
                sc["score_p"] = score_p
                sc["factor"] = factor
                stage_logit_tensors.append(logit_full)
            sc["logit_full"] = logit_full

            if spec.pool_after:
                pooled, argmax = ops.max_pool2d(hcur, 2, spec.pool_stride)
                sc["pool"] = (hcur, argmax, pooled)
                x = pooled
            cache["stages"].append(sc)

        fused_logit = None
        if cfg.fusion_enabled and stage_logit_tensors:
            cat = ops.concat_channels(stage_logit_tensors)
            fuse_p = self._conv_params("fuse")
            fused_logit = ops.conv2d(cat, fuse_p)
            cache["cat"] = cat
            cache["fuse_p"] = fuse_p

        stage_maps = [ops.sigmoid(t).data for t in stage_logit_tensors]
        stage_logits = [t.data for t in stage_logit_tensors]
        if fused_logit is not None:
            fused_map = ops.sigmoid(fused_logit).data
            fused_logit_arr = fused_logit.data
        elif stage_maps:
            fused_map = np.mean(stage_maps, axis=0)
            fused_logit_arr = None
        else:
            fused_map = None
            fused_logit_arr = None

        self._cache = cache if train else None
        return SideOutputs(stage_maps=stage_maps, fused_map=fused_map,
                           stage_logits=stage_logits,
                           fused_logit=fused_logit_arr)

    def backward(self, stage_logit_grads, fused_logit_grad=None):
        """Accumulate parameter grads from per-map logit gradients.

        ``stage_logit_grads`` follows the order of the stages that have
        side branches; requires a preceding forward(..., train=True).
        """
        cache = self._cache
        if cache is None:
            raise RuntimeError("backward requires forward(..., train=True) first")
        cfg = self.config
        h, w = cache["hw"]

        side_stages = [sc for sc in cache["stages"] if sc["logit_full"] is not None]
        if len(stage_logit_grads) != len(side_stages):
            raise ShapeError(
                f"got {len(stage_logit_grads)} stage grads for "
                f"{len(side_stages)} side branches")

        if fused_logit_grad is not None:
            if "cat" not in cache:
                raise ShapeError("fused gradient given but fusion is disabled")
            gcat, _, _ = ops.conv2d_backward(
                cache["cat"], cache["fuse_p"], np.asarray(fused_logit_grad))
            for k, sc in enumerate(side_stages):
                sc["logit_full"].accumulate_grad(gcat.data[:, k:k + 1])
        for g, sc in zip(stage_logit_grads, side_stages):
            sc["logit_full"].accumulate_grad(np.asarray(g))

        for i in reversed(range(len(cfg.stages))):
            sc = cache["stages"][i]
            spec = cfg.stages[i]
            if sc["logit_full"] is not None:
                glog = sc["logit_full"].grad
                if sc["factor"] > 1:
                    gscore = ops.bilinear_upsample_backward(
                        sc["score"], sc["factor"], h, w, glog)
                else:
                    gscore = Tensor(glog)
                ge, _, _ = ops.conv2d_backward(sc["e"], sc["score_p"], gscore.data)
                for a_tap, m_pre, p in sc["side"]:
                    gm = ge.data
                    if cfg.side_nonlinearity:
                        gm = ops.relu_backward(m_pre, gm).data
                    ops.conv2d_backward(a_tap, p, gm)
            if "pool" in sc:
                a_last, argmax, pooled = sc["pool"]
                if pooled.grad is not None:
                    ops.max_pool2d_backward(a_last, argmax, pooled.grad)
            for hcur, z, a, p in reversed(sc["convs"]):
                ga = a.grad if a.grad is not None else np.zeros_like(a.data)
                gz = ops.relu_backward(z, ga)
                ops.conv2d_backward(hcur, p, gz.data)

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()


def build(config, seed=0, dtype=np.float32):
    """Instantiate all parameters of a config.

    Backbone/side/score convs draw from N(0, init_std^2) with zero bias
    (init_std="he" switches to fan-in scaled He init for the backbone);
    the fusion conv starts at 0.2 weights, zero bias.
    """
    model = Model(config, dtype=dtype)
    rng = np.random.default_rng(seed)
    he = config.init_std == "he"
    std = None if he else float(config.init_std)

    in_c = config.in_channels
    for i, spec in enumerate(config.stages):
        c_in = in_c
        for ci in range(spec.num_convs):
            shape = (spec.out_channels, c_in, 3, 3)
            s = math.sqrt(2.0 / (c_in * 9)) if he else std
            model._add_param(f"stage{i + 1}/conv{ci + 1}/w",
                             rng.normal(0.0, s, size=shape))
            model._add_param(f"stage{i + 1}/conv{ci + 1}/b",
                             np.zeros((1, spec.out_channels, 1, 1)))
            c_in = spec.out_channels
        for ti in model._tap_indices(spec):
            s = math.sqrt(2.0 / spec.out_channels) if he else std
            model._add_param(
                f"stage{i + 1}/side{ti + 1}/w",
                rng.normal(0.0, s, size=(config.side_channels,
                                         spec.out_channels, 1, 1)))
            model._add_param(f"stage{i + 1}/side{ti + 1}/b",
                             np.zeros((1, config.side_channels, 1, 1)))
        if spec.side_mode is not SideMode.NONE:
            s = math.sqrt(2.0 / config.side_channels) if he else std
            model._add_param(f"stage{i + 1}/score/w",
                             rng.normal(0.0, s, size=(1, config.side_channels, 1, 1)))
            model._add_param(f"stage{i + 1}/score/b", np.zeros((1, 1, 1, 1)))
        in_c = spec.out_channels

    k = len(model.side_stage_indices())
    if config.fusion_enabled and k > 0:
        model._add_param("fuse/w", np.full((1, k, 1, 1), 0.2))
        model._add_param("fuse/b", np.zeros((1, 1, 1, 1)))
    return model


# -- weight file I/O -------------------------------------------------------

class WeightFileError(ValueError):
    pass


def _write_tensor(fh, name, array):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def write_tensor_file(path, named_arrays):
    """Write an ordered {name: array} mapping in the RCFW container."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", WEIGHT_VERSION))
        fh.write(struct.pack("<I", len(named_arrays)))
        for name in named_arrays:
            _write_tensor(fh, name, named_arrays[name])


def read_tensor_file(path):
    """Parse an RCFW container into an ordered {name: float32 array} dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"{path}: bad magic bytes")
    off = 4
    try:
        version, count = struct.unpack_from("<II", blob, off)
        off += 8
        if version != WEIGHT_VERSION:
            raise WeightFileError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if off + 4 * size > len(blob):
                raise WeightFileError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = arr.reshape(dims).copy()
        return out
    except struct.error as exc:
        raise WeightFileError(f"{path}: truncated file") from exc


def save_weights(model, path, extra=None):
    named = {name: model.params[name].data for name in sorted(model.params)}
    if extra:
        named.update(extra)
    write_tensor_file(path, named)


def load_weights(model, path):
    """Load parameters; returns any extra (opt/, meta/) tensors.

    The model is untouched unless the file parses and matches exactly.
    """
    loaded = read_tensor_file(path)
    extras = {k: v for k, v in loaded.items() if "/" in k
              and k.split("/")[0] in ("opt", "meta")}
    weights = {k: v for k, v in loaded.items() if k not in extras}
    model_names = sorted(model.params)
    file_names = sorted(weights)
    if model_names != file_names:
        for a, b in zip(model_names, file_names):
            if a != b:
                raise WeightFileError(
                    f"{path}: tensor name mismatch, model has {a!r}, "
                    f"file has {b!r}")
        longer = model_names if len(model_names) > len(file_names) else file_names
        raise WeightFileError(
            f"{path}: tensor name mismatch at {longer[min(len(model_names), len(file_names))]!r}")
    for name in model_names:
        if tuple(weights[name].shape) != model.params[name].dims:
            raise WeightFileError(
                f"{path}: dims mismatch for {name!r}: file "
                f"{weights[name].shape}, model {model.params[name].dims}")
    for name in model_names:
        model.params[name].data = np.ascontiguousarray(
            weights[name].astype(model.dtype))
        model.params[name].grad = None
        model.params[name].velocity = None
    return extras


# -- config file I/O -------------------------------------------------------

_NETWORK_KEYS = {"fusion_enabled", "dilation_stage5", "pool4_stride",
                 "side_nonlinearity", "side_channels", "in_channels",
                 "init_std", "mean_rgb", "num_stages"}
_STAGE_KEYS = {"num_convs", "out_channels", "side_mode", "pool_after",
               "pool_stride"}


class ConfigError(ValueError):
    pass


def _parse_bool(v, where):
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {v!r}")


def parse_config_text(text):
    """Parse the line-oriented config format into a NetworkConfig."""
    sections = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise ConfigError(f"line {ln}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {ln}: key outside any [section]")
        key, val = (part.strip() for part in line.split("=", 1))
        sections[current][key] = val

    net = sections.pop("network", {})
    for key in net:
        if key not in _NETWORK_KEYS:
            raise ConfigError(f"[network]: unknown key {key!r}")
    stage_sections = {}
    for name in list(sections):
        if name.startswith("stage") and name[5:].isdigit():
            stage_sections[int(name[5:])] = sections.pop(name)
        else:
            raise ConfigError(f"unknown section [{name}]")
    if not stage_sections:
        raise ConfigError("config defines no [stageN] sections")
    indices = sorted(stage_sections)
    if indices != list(range(1, len(indices) + 1)):
        raise ConfigError(f"stage sections must be numbered 1..K, got {indices}")

    stages = []
    for i in indices:
        sec = stage_sections[i]
        for key in sec:
            if key not in _STAGE_KEYS:
                raise ConfigError(f"[stage{i}]: unknown key {key!r}")
        if "num_convs" not in sec or "out_channels" not in sec:
            raise ConfigError(f"[stage{i}]: num_convs and out_channels required")
        stages.append(StageSpec(
            num_convs=int(sec["num_convs"]),
            out_channels=int(sec["out_channels"]),
            side_mode=SideMode(sec.get("side_mode", "all")),
            pool_after=_parse_bool(sec.get("pool_after", "true"), f"[stage{i}]"),
            pool_stride=int(sec.get("pool_stride", "2"))))

    kwargs = {}
    if "fusion_enabled" in net:
        kwargs["fusion_enabled"] = _parse_bool(net["fusion_enabled"], "[network]")
    if "side_nonlinearity" in net:
        kwargs["side_nonlinearity"] = _parse_bool(net["side_nonlinearity"],
                                                  "[network]")
    for key in ("dilation_stage5", "pool4_stride", "side_channels", "in_channels"):
        if key in net:
            kwargs[key] = int(net[key])
    if "init_std" in net:
        v = net["init_std"]
        kwargs["init_std"] = v if v == "he" else float(v)
    if "mean_rgb" in net:
        kwargs["mean_rgb"] = tuple(float(x) for x in net["mean_rgb"].split(","))
    if "num_stages" in net and int(net["num_stages"]) != len(stages):
        raise ConfigError("num_stages does not match the [stageN] sections")
    return NetworkConfig(stages=stages, **kwargs)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(config):
    lines = ["[network]",
             f"num_stages = {len(config.stages)}",
             f"fusion_enabled = {str(config.fusion_enabled).lower()}",
             f"dilation_stage5 = {config.dilation_stage5}",
             f"pool4_stride = {config.pool4_stride}",
             f"side_nonlinearity = {str(config.side_nonlinearity).lower()}",
             f"side_channels = {config.side_channels}",
             f"in_channels = {config.in_channels}",
             f"init_std = {config.init_std}",
             "mean_rgb = " + ", ".join(str(v) for v in config.mean_rgb),
             ""]
    for i, s in enumerate(config.stages, 1):
        lines += [f"[stage{i}]",
                  f"num_convs = {s.num_convs}",
                  f"out_channels = {s.out_channels}",
                  f"side_mode = {s.side_mode.value}",
                  f"pool_after = {str(s.pool_after).lower()}",
                  f"pool_stride = {s.pool_stride}",
                  ""]
    return "\n".join(lines)


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(config))
