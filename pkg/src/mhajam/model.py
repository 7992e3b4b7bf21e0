"""Multi-head attention over a joint agent-map representation.

Shapes used throughout (B episodes, L modes, P = M*N grid cells):

* trajectory encodings ``h``: (R, C_h), target rows first
* social tensor and CNN map features: (B, M, N, C_h) and (B, M, N, C_m)
* attention weights per head: (B, L, P)
* decoder output: (B, L, t_f, 5) raw values -> mu, sigma, rho
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import InteractionSpace, RasterMap, distance_field, raster_shape, rasterize
from .neural import ParamStore, Tensor
from .neural import ops
from .synth import AgentHistory, Episode

VARIANTS = ("JAM", "SAM", "agents_only", "map_only", "JAH")
SIGMA_MIN, SIGMA_MAX = 1e-3, 50.0
RHO_SCALE = 0.999
VALUE_BIAS_INIT = 1.0
# fixed input normalisation for (x, y, v, a, yaw_rate)
STATE_SCALE = np.array([10.0, 10.0, 10.0, 3.0, 1.0])


@dataclass(frozen=True)
class ModelConfig:
    n_modes: int = 16
    key_dim: int = 64
    embed_dim: int = 32
    enc_hidden: int = 64
    dec_hidden: int = 128
    grid: tuple[int, int] = (13, 13)
    map_channels: int = 32
    variant: str = "JAM"
    resolution: float = 0.5
    lateral_extent: float = 25.0
    ahead_extent: float = 40.0
    behind_extent: float = 10.0
    # (out_channels, kernel, stride, padding); the last layer emits map_channels
    cnn_layers: tuple = ((16, 3, 2, "same"), (32, 3, 2, "same"), (32, 3, 2, "same"))
    prob_hidden: int = 64
    future_len: int = 12
    position_scale: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "cnn_layers", tuple(tuple(layer) for layer in self.cnn_layers))
        if self.n_modes < 1:
            raise ValueError("ModelConfig.n_modes must be >= 1")
        if self.key_dim < 1:
            raise ValueError("ModelConfig.key_dim must be > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"ModelConfig.variant must be one of {VARIANTS}")
        if not self.cnn_layers or self.cnn_layers[-1][0] != self.map_channels:
            raise ValueError("ModelConfig.cnn_layers must end with map_channels outputs")
        if self.cnn_output_shape() != self.grid:
            raise ValueError(
                f"ModelConfig.grid {self.grid} does not match CNN output {self.cnn_output_shape()}"
            )

    @property
    def space(self) -> InteractionSpace:
        return InteractionSpace(self.lateral_extent, self.ahead_extent, self.behind_extent)

    @property
    def raster_shape(self) -> tuple[int, int]:
        return raster_shape(self.space, self.resolution)

    def cnn_output_shape(self) -> tuple[int, int]:
        h, w = self.raster_shape
        for _, k, s, pad in self.cnn_layers:
            if pad == "same":
                h, w = -(-h // s), -(-w // s)
            else:
                h, w = (h - k) // s + 1, (w - k) // s + 1
        return h, w

    @property
    def value_dim(self) -> int:
        return self.key_dim

    @property
    def context_dim(self) -> int:
        n_blocks = 2 if self.variant == "SAM" else 1
        return self.enc_hidden + n_blocks * self.value_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["cnn_layers"] = [list(x) for x in self.cnn_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        """500x500 raster at 0.1 m/px with a stack ending in a 28x28x512 map."""
        base = dict(
            grid=(28, 28), map_channels=512, resolution=0.1,
            cnn_layers=((32, 3, 2, "same"), (64, 3, 2, "same"), (128, 3, 2, "same"),
                        (256, 3, 2, "same"), (512, 5, 1, "valid")),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def compact(cls, **overrides) -> "ModelConfig":
        """50x50 raster at 1 m/px, two conv blocks to 13x13, narrow layers; trains in about a minute."""
        base = dict(
            key_dim=16, embed_dim=16, enc_hidden=32, dec_hidden=64, map_channels=16,
            resolution=1.0, cnn_layers=((8, 3, 2, "same"), (16, 3, 2, "same")), prob_hidden=32,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Gradient-check scale: L=2, 3x3 grid, 10x10 raster at 5 m/px."""
        base = dict(
            n_modes=2, key_dim=3, embed_dim=3, enc_hidden=4, dec_hidden=4, grid=(3, 3),
            map_channels=2, resolution=5.0, cnn_layers=((3, 3, 2, "same"), (2, 3, 2, "same")),
            prob_hidden=3, future_len=3,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class PredictionSet:
    """Mixture prediction for one episode: L modes x t_f Gaussians plus mode probabilities."""

    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    probs: np.ndarray
    attention: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.mu.shape[0]

    def gaussian(self, l: int, t: int) -> tuple:
        return (*self.mu[l, t], *self.sigma[l, t], self.rho[l, t])

    def validate(self):
        if not (np.all(self.sigma > 0) and np.all(np.abs(self.rho) < 1)):
            raise ValueError("invalid Gaussian parameters")
        if np.any(self.probs < 0) or abs(float(self.probs.sum()) - 1) > 1e-6:
            raise ValueError("mode probabilities do not form a distribution")
        return self


@dataclass
class ModelOutput:
    """Differentiable batched outputs of :func:`forward`."""

    mu: Tensor            # (B, L, T, 2)
    sigma: Tensor         # (B, L, T, 2)
    rho: Tensor           # (B, L, T)
    probs: Tensor         # (B, L)
    log_probs: Tensor     # (B, L)
    attention: dict       # name -> (B, L, M, N) arrays

    def prediction(self, b: int) -> PredictionSet:
        return PredictionSet(
            self.mu.data[b].astype(float), self.sigma.data[b].astype(float),
            self.rho.data[b].astype(float), self.probs.data[b].astype(float),
            {k: v[b] for k, v in self.attention.items()},
        )

    def predictions(self) -> list[PredictionSet]:
        return [self.prediction(b) for b in range(self.mu.shape[0])]


# ----------------------------------------------------------------- parameters

def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) weights, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    ps = ParamStore(dtype)
    E, Ch, H, L, d = cfg.embed_dim, cfg.enc_hidden, cfg.dec_hidden, cfg.n_modes, cfg.key_dim

    def lin(name, n_in, n_out):
        ps.uniform(f"{name}.w", (n_in, n_out), n_in, rng)
        ps.uniform(f"{name}.b", (n_out,), n_in, rng)

    def lstm(name, n_in, hid):
        ps.uniform(f"{name}.w_ih", (n_in, 4 * hid), hid, rng)
        ps.uniform(f"{name}.w_hh", (hid, 4 * hid), hid, rng)
        ps.uniform(f"{name}.b", (4 * hid,), hid, rng)

    lin("enc.embed", 5, E)
    lstm("enc.lstm", E, Ch)
    if cfg.variant != "agents_only":
        c_in = 4
        for i, (c_out, k, _, _) in enumerate(cfg.cnn_layers):
            fan = c_in * k * k
            ps.uniform(f"map.conv{i}.w", (c_out, c_in, k, k), fan, rng)
            ps.uniform(f"map.conv{i}.b", (c_out,), fan, rng)
            c_in = c_out
    for block, c in _attention_blocks(cfg):
        lin(f"{block}.query", Ch, L * d)
        lin(f"{block}.key", c, L * d)
        ps.uniform(f"{block}.value.w", (c, L * cfg.value_dim), c, rng)
        # attention weights sum to one, so the value bias is a per-head offset of A_l;
        # a wide init separates the modes from the first step
        ps.add(f"{block}.value.b", rng.uniform(-VALUE_BIAS_INIT, VALUE_BIAS_INIT, L * cfg.value_dim))
    if cfg.variant == "JAH":
        lin("att.mix", L * cfg.value_dim, L * cfg.value_dim)
    Z = cfg.context_dim
    lstm("dec.lstm", Z, H)
    lin("dec.out", H, 5)
    lin("prob.fc1", L * Z, cfg.prob_hidden)
    lin("prob.fc2", cfg.prob_hidden, L)
    return ps


def _attention_blocks(cfg: ModelConfig):
    """(parameter prefix, key/value input channels) for each attention block."""
    Ch, Cm = cfg.enc_hidden, cfg.map_channels
    if cfg.variant == "SAM":
        return [("att_agents", Ch), ("att_map", Cm)]
    if cfg.variant == "agents_only":
        return [("att", Ch)]
    if cfg.variant == "map_only":
        return [("att", Cm)]
    return [("att", Ch + Cm)]


# -------------------------------------------------------------------- encoders

def normalize_states(states) -> np.ndarray:
    return np.asarray(states, dtype=float) / STATE_SCALE


def encode_states(states: np.ndarray, params: ParamStore) -> Tensor:
    """Shared embedding + LSTM over (R, T, 5) state rows; returns final hidden (R, C_h)."""
    x = Tensor(normalize_states(states).astype(params.dtype))
    e = ops.tanh(ops.linear(x, params["enc.embed.w"], params["enc.embed.b"]))
    R, T = states.shape[:2]
    Ch = params["enc.lstm.w_hh"].shape[0]
    h = Tensor(np.zeros((R, Ch), dtype=params.dtype))
    c = Tensor(np.zeros((R, Ch), dtype=params.dtype))
    gx = ops.linear(e, params["enc.lstm.w_ih"], params["enc.lstm.b"])
    for t in range(T):
        h, c = ops.lstm_cell_step_projected(gx[:, t, :], h, c, params["enc.lstm.w_hh"])
    return h


def encode_history(history: AgentHistory, params: ParamStore) -> Tensor:
    """Encode one agent's history into a (C_h,) hidden vector."""
    if len(history) < 1:
        raise ValueError("history must contain at least one state")
    return encode_states(history.states[None], params)[0]


def encode_map(raster, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """CNN map features (B, M, N, C_m) from rasters (B, 4, H, W) or a RasterMap."""
    data = raster.data[None] if isinstance(raster, RasterMap) else np.asarray(raster)
    if data.shape[1:] != (4, *cfg.raster_shape):
        raise ValueError(f"encode_map: raster shape {data.shape[1:]} does not match config "
                         f"{(4, *cfg.raster_shape)}")
    x = Tensor(data.astype(params.dtype))
    for i, (_, _, stride, pad) in enumerate(cfg.cnn_layers):
        x = ops.tanh(ops.conv2d(x, params[f"map.conv{i}.w"], params[f"map.conv{i}.b"],
                                stride=stride, padding=pad))
    return ops.transpose(x, (0, 2, 3, 1))


def social_cells(positions, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Grid (row, col) of target-frame positions; row 0 is the far-ahead edge."""
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    M, N = cfg.grid
    sp = cfg.space
    col = np.floor((p[:, 0] + sp.lateral_extent) / (sp.width / N)).astype(int)
    row = np.floor((sp.ahead_extent - p[:, 1]) / (sp.length / M)).astype(int)
    return np.clip(row, 0, M - 1), np.clip(col, 0, N - 1)


def resolve_cells(positions, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Flat cell per neighbour, keeping only the one nearest the target per cell.

    Returns ``(kept_indices, flat_cells)``.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    row, col = social_cells(p, cfg)
    flat = row * cfg.grid[1] + col
    dist = np.hypot(p[:, 0], p[:, 1])
    order = np.lexsort((np.arange(len(p)), dist))
    seen = {}
    for i in order:
        seen.setdefault(int(flat[i]), int(i))
    kept = np.array(sorted(seen.values()), dtype=int)
    return kept, flat[kept]


def build_social_tensor(hiddens: Tensor, positions, cfg: ModelConfig) -> Tensor:
    """(M, N, C_h) grid holding each neighbour's encoding at its cell."""
    M, N = cfg.grid
    Ch = cfg.enc_hidden
    hiddens = hiddens if isinstance(hiddens, Tensor) else Tensor(np.asarray(hiddens))
    kept, cells = resolve_cells(positions, cfg)
    if len(kept) == 0:
        return Tensor(np.zeros((M, N, Ch), dtype=hiddens.dtype))
    rows = hiddens[kept]
    return ops.reshape(ops.scatter_rows_to_grid(rows, cells, M * N), (M, N, Ch))


# ------------------------------------------------------------------- attention

def _head_slice(t: Tensor, l: int, d: int) -> Tensor:
    return t[..., l * d:(l + 1) * d]


def attention_head(l: int, h_T: Tensor, F: Tensor, params: ParamStore, cfg: ModelConfig,
                   block: str = "att"):
    """Single head ``l`` for one episode.

    ``h_T`` (C_h,), ``F`` (M, N, C). Returns ``(z_l, alpha_l, A_l)`` where
    ``alpha_l`` has shape (M, N).
    """
    d = cfg.key_dim
    M, N, C = F.shape
    Fp = ops.reshape(F, (M * N, C))
    wq = _head_slice(params[f"{block}.query.w"], l, d)
    bq = _head_slice(params[f"{block}.query.b"], l, d)
    wk = _head_slice(params[f"{block}.key.w"], l, d)
    bk = _head_slice(params[f"{block}.key.b"], l, d)
    wv = _head_slice(params[f"{block}.value.w"], l, cfg.value_dim)
    bv = _head_slice(params[f"{block}.value.b"], l, cfg.value_dim)
    q = ops.linear(ops.reshape(h_T, (1, -1)), wq, bq)              # (1, d)
    k = ops.conv1x1(Fp, wk, bk)                                    # (P, d)
    v = ops.conv1x1(Fp, wv, bv)                                    # (P, dv)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (1, 0))), 1.0 / math.sqrt(d))
    alpha = ops.softmax(scores)                                    # (1, P)
    A = ops.reshape(ops.matmul(alpha, v), (-1,))
    z = ops.concat([ops.reshape(h_T, (-1,)), A], axis=0)
    return z, ops.reshape(alpha, (M, N)), A


def _attention_all_heads(h_T: Tensor, F: Tensor, params: ParamStore, cfg: ModelConfig, block: str):
    """All L heads at once. h_T (B, C_h), F (B, M, N, C) -> A (B, L, dv), alpha (B, L, P)."""
    B, M, N, C = F.shape
    L, d, dv = cfg.n_modes, cfg.key_dim, cfg.value_dim
    P = M * N
    Fp = ops.reshape(F, (B, P, C))
    q = ops.reshape(ops.linear(h_T, params[f"{block}.query.w"], params[f"{block}.query.b"]), (B, L, 1, d))
    k = ops.conv1x1(Fp, params[f"{block}.key.w"], params[f"{block}.key.b"])
    k = ops.transpose(ops.reshape(k, (B, P, L, d)), (0, 2, 3, 1))          # (B, L, d, P)
    v = ops.conv1x1(Fp, params[f"{block}.value.w"], params[f"{block}.value.b"])
    v = ops.transpose(ops.reshape(v, (B, P, L, dv)), (0, 2, 1, 3))         # (B, L, P, dv)
    scores = ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(d))               # (B, L, 1, P)
    alpha = ops.softmax(scores)
    A = ops.reshape(ops.matmul(alpha, v), (B, L, dv))
    return A, ops.reshape(alpha, (B, L, P))


# -------------------------------------------------------------------- decoding

def gaussian_head(raw: Tensor, cfg: ModelConfig):
    """Raw (..., 5) -> mu (..., 2), sigma (..., 2), rho (...)."""
    mu = ops.scale(raw[..., 0:2], cfg.position_scale)
    sigma = ops.exp(ops.clip(raw[..., 2:4], math.log(SIGMA_MIN), math.log(SIGMA_MAX)))
    rho = ops.scale(ops.tanh(raw[..., 4]), RHO_SCALE)
    return mu, sigma, rho


def decode(z: Tensor, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Shared-weight LSTM decoder: z (R, Z) fed at every step -> raw (R, t_f, 5)."""
    R = z.shape[0]
    H = cfg.dec_hidden
    h = Tensor(np.zeros((R, H), dtype=params.dtype))
    c = Tensor(np.zeros((R, H), dtype=params.dtype))
    gx = ops.linear(z, params["dec.lstm.w_ih"], params["dec.lstm.b"])
    outs = []
    for _ in range(cfg.future_len):
        h, c = ops.lstm_cell_step_projected(gx, h, c, params["dec.lstm.w_hh"])
        outs.append(h)
    hs = ops.stack(outs, axis=1)
    return ops.linear(hs, params["dec.out.w"], params["dec.out.b"])


def decode_mode(z_l: Tensor, params: ParamStore, cfg: ModelConfig):
    """Decode one mode's context into (mu (t_f, 2), sigma (t_f, 2), rho (t_f,))."""
    raw = decode(ops.reshape(z_l, (1, -1)), params, cfg)[0]
    return gaussian_head(raw, cfg)


def mode_logits(z: Tensor, params: ParamStore) -> Tensor:
    """z (B, L, Z) -> unnormalised mode scores (B, L)."""
    flat = ops.flatten(z, 1)
    hidden = ops.tanh(ops.linear(flat, params["prob.fc1.w"], params["prob.fc1.b"]))
    return ops.linear(hidden, params["prob.fc2.w"], params["prob.fc2.b"])


def mode_probabilities(z: Tensor, params: ParamStore) -> Tensor:
    """Softmax over L of the two-layer head applied to the concatenated contexts."""
    return ops.softmax(mode_logits(z, params))


# --------------------------------------------------------------------- batches

@dataclass
class PreparedEpisode:
    """Per-episode arrays computed once: kept neighbours, raster and distance field."""

    target_states: np.ndarray       # (T, 5)
    neighbor_states: np.ndarray     # (K, T, 5)
    neighbor_cells: np.ndarray      # (K,) flat cells in M * N
    raster: np.ndarray              # (4, H, W) uint8
    field: object = None            # DistanceField or None
    future: np.ndarray | None = None


def prepare_episode(ep: Episode, cfg: ModelConfig, with_field: bool = True) -> PreparedEpisode:
    nbs = ep.neighbor_histories
    kept, cells = resolve_cells([n.position for n in nbs], cfg)
    T = len(ep.target_history)
    nstates = np.stack([nbs[i].states for i in kept]) if len(kept) else np.zeros((0, T, 5))
    raster = rasterize(ep.scene, ep.target_pose, cfg.space, cfg.resolution)
    fut = ep.ground_truth_future
    if fut is not None and len(fut) != cfg.future_len:
        raise ValueError(f"episode horizon {len(fut)} != config future_len {cfg.future_len}")
    return PreparedEpisode(
        ep.target_history.states, nstates, np.asarray(cells, dtype=int), raster.data,
        distance_field(raster) if with_field else None, fut,
    )


@dataclass
class Batch:
    """Stacked episodes ready for :func:`forward`."""

    states: np.ndarray          # (R, T, 5), the B target rows first
    n_episodes: int
    neighbor_rows: np.ndarray   # rows of ``states`` written into the social tensor
    neighbor_cells: np.ndarray  # flat cell in B * M * N
    rasters: np.ndarray         # (B, 4, H, W)
    fields: list | None = None
    futures: np.ndarray | None = None

    @property
    def target_states(self) -> np.ndarray:
        return self.states[:self.n_episodes, -1]


def collate(items: list[PreparedEpisode], cfg: ModelConfig) -> Batch:
    B = len(items)
    P = cfg.grid[0] * cfg.grid[1]
    states = [it.target_states[None] for it in items]
    rows, cells = [], []
    nxt = B
    for b, it in enumerate(items):
        k = len(it.neighbor_cells)
        if k:
            states.append(it.neighbor_states)
            rows.extend(range(nxt, nxt + k))
            cells.extend(b * P + it.neighbor_cells)
            nxt += k
    lengths = {s.shape[1] for s in states}
    if len(lengths) != 1:
        raise ValueError(f"all histories in a batch must share a length, got {sorted(lengths)}")
    fields = [it.field for it in items] if all(it.field is not None for it in items) else None
    futures = np.stack([it.future for it in items]) if all(it.future is not None for it in items) else None
    return Batch(np.concatenate(states), B, np.array(rows, dtype=int), np.array(cells, dtype=int),
                 np.stack([it.raster for it in items]), fields, futures)


def make_batch(episodes: list[Episode], cfg: ModelConfig, with_fields: bool = True) -> Batch:
    return collate([prepare_episode(ep, cfg, with_fields) for ep in episodes], cfg)


# --------------------------------------------------------------------- forward

def forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> ModelOutput:
    """Full network on a batch; composition depends on ``cfg.variant``."""
    B = batch.n_episodes
    M, N = cfg.grid
    L = cfg.n_modes
    h = encode_states(batch.states, params)
    h_T = h[:B]
    Ch = cfg.enc_hidden

    F_s = None
    if cfg.variant != "map_only":
        if len(batch.neighbor_rows):
            grid = ops.scatter_rows_to_grid(h[batch.neighbor_rows], batch.neighbor_cells, B * M * N)
            F_s = ops.reshape(grid, (B, M, N, Ch))
        else:
            F_s = Tensor(np.zeros((B, M, N, Ch), dtype=params.dtype))
    F_m = None
    if cfg.variant != "agents_only":
        if batch.rasters is None:
            raise ValueError("variant needs map rasters")
        F_m = encode_map(batch.rasters, params, cfg)

    attention = {}
    if cfg.variant == "SAM":
        A_s, a_s = _attention_all_heads(h_T, F_s, params, cfg, "att_agents")
        A_m, a_m = _attention_all_heads(h_T, F_m, params, cfg, "att_map")
        A = ops.concat([A_s, A_m], axis=-1)
        attention["agents"] = a_s.data.reshape(B, L, M, N)
        attention["map"] = a_m.data.reshape(B, L, M, N)
    else:
        if cfg.variant == "agents_only":
            feat = F_s
        elif cfg.variant == "map_only":
            feat = F_m
        else:
            feat = ops.concat([F_s, F_m], axis=-1)
        A, alpha = _attention_all_heads(h_T, feat, params, cfg, "att")
        attention["joint"] = alpha.data.reshape(B, L, M, N)
        if cfg.variant == "JAH":
            mixed = ops.linear(ops.flatten(A, 1), params["att.mix.w"], params["att.mix.b"])
            A = ops.reshape(mixed, (B, L, cfg.value_dim))

    h_rep = ops.broadcast_to(ops.reshape(h_T, (B, 1, Ch)), (B, L, Ch))
    z = ops.concat([h_rep, A], axis=-1)                                   # (B, L, Z)
    raw = decode(ops.reshape(z, (B * L, cfg.context_dim)), params, cfg)
    raw = ops.reshape(raw, (B, L, cfg.future_len, 5))
    mu, sigma, rho = gaussian_head(raw, cfg)
    logits = mode_logits(z, params)
    return ModelOutput(mu, sigma, rho, ops.softmax(logits), ops.log_softmax(logits), attention)


def predict(episodes: list[Episode], params: ParamStore, cfg: ModelConfig,
            batch_size: int = 64) -> list[PredictionSet]:
    out = []
    for i in range(0, len(episodes), batch_size):
        batch = make_batch(episodes[i:i + batch_size], cfg, with_fields=False)
        out.extend(forward(batch, params, cfg).predictions())
    return out
