"""Correlation-aware vector-scalar encoder.

For every vector column the bundle keeps one frozen predictor network per
scalar column (trained to predict that scalar from the vector, then frozen),
one trainable projector, and one autoencoder over the concatenation

    E = [frozen_1(v); ...; frozen_M(v); projector(v); onehot(s_1); ...; onehot(s_M)]

The autoencoder is trained to reconstruct E on data drawn from the table, so
its reconstruction error scores how well a (vector, scalars) pairing matches
the learned joint distribution. Gradients flow through the projector during
autoencoder training; the frozen predictors never change there.

Query-side scalars come from predicates rather than stored values: equality
predicates contribute their value, range predicates contribute the midpoint
of the (clipped) interval, and columns without a predicate contribute a
uniform distribution over their one-hot slots.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    EmptyTable,
    NotFitted,
)
from .nn import FeedForwardNet, IDENTITY, RELU, TrainConfig, mse_loss, softmax, train
from .store import PredicateOp, ScalarKind, Table


@dataclass
class ScalarEncoderSpec:
    column: str
    kind: ScalarKind
    categories: list = None  # categorical: sorted dictionary, OTHER is last
    bin_edges: np.ndarray = None  # numeric: len(num_bins) + 1

    @property
    def width(self) -> int:
        if self.kind is ScalarKind.CATEGORICAL:
            return len(self.categories) + 1
        return len(self.bin_edges) - 1

    def slot_of(self, value) -> int:
        if self.kind is ScalarKind.CATEGORICAL:
            try:
                return self.categories.index(str(value))
            except ValueError:
                return len(self.categories)  # OTHER
        v = float(value)
        edges = self.bin_edges
        if v <= edges[0]:
            return 0
        if v >= edges[-1]:
            return self.width - 1
        return int(np.searchsorted(edges, v, side="right")) - 1

    def slots_of(self, values) -> np.ndarray:
        """Vectorised slot_of; identical boundary handling."""
        if self.kind is ScalarKind.CATEGORICAL:
            lookup = {c: i for i, c in enumerate(self.categories)}
            other = len(self.categories)
            return np.array([lookup.get(str(v), other) for v in values])
        vals = np.asarray(values, dtype=np.float64)
        slots = np.searchsorted(self.bin_edges, vals, side="right") - 1
        return np.clip(slots, 0, self.width - 1)

    def encode_value(self, value) -> np.ndarray:
        out = np.zeros(self.width)
        out[self.slot_of(value)] = 1.0
        return out

    def encode_uniform(self) -> np.ndarray:
        return np.full(self.width, 1.0 / self.width)

    def encode_predicates(self, predicates) -> np.ndarray:
        """Predicates on this column only; empty list means no constraint."""
        if not predicates:
            return self.encode_uniform()
        if self.kind is ScalarKind.CATEGORICAL:
            return self.encode_value(predicates[-1].value)
        lo, hi = float(self.bin_edges[0]), float(self.bin_edges[-1])
        for p in predicates:
            if p.op is PredicateOp.EQ:
                return self.encode_value(p.value)
            if p.op is PredicateOp.LT or p.op is PredicateOp.LE:
                hi = min(hi, float(p.value))
            elif p.op is PredicateOp.GT or p.op is PredicateOp.GE:
                lo = max(lo, float(p.value))
            else:
                lo = max(lo, float(p.value))
                hi = min(hi, float(p.high))
        lo = min(max(lo, float(self.bin_edges[0])), float(self.bin_edges[-1]))
        hi = min(max(hi, float(self.bin_edges[0])), float(self.bin_edges[-1]))
        return self.encode_value((lo + hi) / 2.0)

    def to_json(self) -> dict:
        return {
            "column": self.column,
            "kind": self.kind.value,
            "categories": self.categories,
            "bin_edges": None if self.bin_edges is None else self.bin_edges.tolist(),
        }

    @classmethod
    def from_json(cls, data) -> "ScalarEncoderSpec":
        return cls(
            column=data["column"],
            kind=ScalarKind(data["kind"]),
            categories=data["categories"],
            bin_edges=None
            if data["bin_edges"] is None
            else np.asarray(data["bin_edges"], dtype=np.float64),
        )


@dataclass
class _FrozenHead:
    net: FeedForwardNet
    kind: ScalarKind
    mean: float = 0.0  # numeric target standardisation, fixed at fit time
    std: float = 1.0
    categories: list = None

    def outputs(self, V: np.ndarray) -> np.ndarray:
        raw = self.net.forward(V)
        if self.kind is ScalarKind.CATEGORICAL:
            return softmax(raw)
        return raw

    def targets_for(self, values):
        if self.kind is ScalarKind.NUMERIC:
            arr = (np.asarray(values, dtype=np.float64) - self.mean) / self.std
            return arr.reshape(-1, 1), None
        labels = []
        keep = []
        for i, v in enumerate(values):
            try:
                labels.append(self.categories.index(str(v)))
                keep.append(i)
            except ValueError:
                continue  # category unseen at fit time
        return np.asarray(labels, dtype=np.int64), np.asarray(keep, dtype=np.int64)


class EncoderBundle:
    def __init__(self, table: Table, config: EngineConfig = EngineConfig()):
        self.table = table
        self.config = config
        self.config_hash = config.hash()
        self.scalar_encoders: dict = {}
        self.frozen: dict = {}  # (vector col, scalar col) -> _FrozenHead
        self.trainable: dict = {}  # vector col -> projector net
        self.autoencoders: dict = {}  # vector col -> net
        self.sample_ids: list = []
        self._fitted = False

    # -- step 1: scalar encoders ------------------------------------------------

    def fit_scalar_encoders(self, bins_for_numeric: int = None) -> dict:
        if self.table.row_count == 0:
            raise EmptyTable("cannot fit encoders on an empty table")
        bins = bins_for_numeric or self.config.encoder_numeric_bins
        specs = {}
        for col in self.table.schema.scalar_columns:
            if col.kind is ScalarKind.CATEGORICAL:
                cats = sorted(set(self.table.categorical_values(col.name)))
                specs[col.name] = ScalarEncoderSpec(
                    column=col.name, kind=col.kind, categories=cats
                )
            else:
                vals = self.table.numeric_values(col.name)
                lo, hi = float(vals.min()), float(vals.max())
                if lo == hi:
                    hi = lo + 1.0
                specs[col.name] = ScalarEncoderSpec(
                    column=col.name,
                    kind=col.kind,
                    bin_edges=np.linspace(lo, hi, bins + 1),
                )
        self.scalar_encoders = specs
        return specs

    @property
    def scalar_width(self) -> int:
        return sum(
            self.scalar_encoders[c.name].width
            for c in self.table.schema.scalar_columns
        )

    def encode_scalar_values(self, values: dict) -> np.ndarray:
        """Concatenated one-hot encodings of one value per scalar column."""
        parts = [
            self.scalar_encoders[c.name].encode_value(values[c.name])
            for c in self.table.schema.scalar_columns
        ]
        return np.concatenate(parts)

    def _column_values_at(self, col, positions: np.ndarray):
        if col.kind is ScalarKind.NUMERIC:
            return self.table.numeric_values(col.name)[positions]
        cats = self.table.categorical_values(col.name)
        return [cats[p] for p in positions]

    def _scalar_matrix(self, positions: np.ndarray,
                       scalar_override: dict = None) -> np.ndarray:
        out = np.zeros((len(positions), self.scalar_width))
        offset = 0
        for col in self.table.schema.scalar_columns:
            spec = self.scalar_encoders[col.name]
            if scalar_override and col.name in scalar_override:
                values = scalar_override[col.name]
            else:
                values = self._column_values_at(col, positions)
            slots = spec.slots_of(values)
            out[np.arange(len(positions)), offset + slots] = 1.0
            offset += spec.width
        return out

    # -- step 2: frozen predictors ----------------------------------------------

    def _draw_sample(self, sample_fraction: float) -> list:
        n = self.table.row_count
        size = min(
            max(1, int(round(n * sample_fraction))), self.config.encoder_sample_cap, n
        )
        rng = np.random.Generator(np.random.PCG64(self.config.seed))
        picks = rng.choice(n, size=size, replace=False)
        return sorted(int(self.table.ids[p]) for p in picks)

    def train_frozen_predictors(self, sample_fraction: float = None,
                                config: TrainConfig = None) -> dict:
        if self.table.row_count == 0:
            raise EmptyTable("cannot train predictors on an empty table")
        if not self.scalar_encoders:
            self.fit_scalar_encoders()
        frac = sample_fraction or self.config.encoder_sample_fraction
        self.sample_ids = self._draw_sample(frac)
        positions = np.array([self.table.position_of(r) for r in self.sample_ids])

        losses = {}
        net_seed = self.config.seed * 1000
        for vcol in self.table.schema.vector_columns:
            V = self.table.vector_matrix(vcol.name)[positions].astype(np.float64)
            for scol in self.table.schema.scalar_columns:
                net_seed += 1
                head = self._make_head(vcol, scol, net_seed)
                cfg = config or TrainConfig(
                    loss="mse" if scol.kind is ScalarKind.NUMERIC else "cross_entropy",
                    learning_rate=self.config.encoder_lr,
                    batch_size=self.config.encoder_batch,
                    epochs=self.config.encoder_epochs,
                    seed=net_seed,
                )
                losses[(vcol.name, scol.name)] = self._fit_head(
                    head, V, positions, scol, cfg
                )
                head.net.freeze()
                self.frozen[(vcol.name, scol.name)] = head
        return losses

    def _make_head(self, vcol, scol, seed: int) -> _FrozenHead:
        if scol.kind is ScalarKind.NUMERIC:
            vals = self.table.numeric_values(scol.name)
            mean = float(vals.mean())
            std = float(vals.std()) or 1.0
            sizes = [vcol.dim, *self.config.frozen_hidden, 1]
            return _FrozenHead(
                net=FeedForwardNet(sizes, seed=seed),
                kind=scol.kind, mean=mean, std=std,
            )
        cats = self.scalar_encoders[scol.name].categories
        sizes = [vcol.dim, *self.config.frozen_hidden, len(cats)]
        return _FrozenHead(
            net=FeedForwardNet(sizes, seed=seed),
            kind=scol.kind, categories=cats,
        )

    def _fit_head(self, head: _FrozenHead, V: np.ndarray, positions, scol,
                  cfg: TrainConfig) -> float:
        if scol.kind is ScalarKind.NUMERIC:
            raw = self.table.numeric_values(scol.name)[positions]
            targets, _ = head.targets_for(raw)
            curve = train(head.net, V, targets, cfg)
        else:
            cats = self.table.categorical_values(scol.name)
            raw = [cats[p] for p in positions]
            labels, keep = head.targets_for(raw)
            curve = train(head.net, V[keep], labels, cfg)
        return curve[-1]

    # -- step 3: vector encoding --------------------------------------------------

    def _ensure_fitted_nets(self, vcol_name: str) -> None:
        if not self.scalar_encoders or not self.frozen or vcol_name not in self.trainable:
            raise NotFitted("encoder bundle is not fully fitted for this column")

    def _init_trainable(self) -> None:
        seed = self.config.seed * 2000
        for vcol in self.table.schema.vector_columns:
            seed += 1
            sizes = [vcol.dim, *self.config.trainable_hidden, self.config.trainable_out]
            self.trainable[vcol.name] = FeedForwardNet(sizes, seed=seed)

    def frozen_outputs(self, vcol_name: str, V: np.ndarray) -> np.ndarray:
        parts = [
            self.frozen[(vcol_name, scol.name)].outputs(V)
            for scol in self.table.schema.scalar_columns
        ]
        return np.concatenate(parts, axis=1)

    def encode_vector(self, vcol_name: str, v) -> np.ndarray:
        """Dual-pathway vector embedding: frozen heads then the projector."""
        vcol = self.table.schema.vector_column(vcol_name)
        if vcol_name not in self.trainable:
            raise NotFitted("projector not initialised; train the autoencoder first")
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (vcol.dim,):
            raise DimensionMismatch(
                f"vector shape {v.shape} does not match column dim {vcol.dim}"
            )
        V = v.reshape(1, -1)
        frozen = self.frozen_outputs(vcol_name, V)[0]
        projected = self.trainable[vcol_name].forward(v)
        return np.concatenate([frozen, projected])

    def embedding_width(self, vcol_name: str) -> int:
        frozen_w = sum(
            self.frozen[(vcol_name, scol.name)].net.output_dim
            for scol in self.table.schema.scalar_columns
        )
        return frozen_w + self.config.trainable_out + self.scalar_width

    # -- step 4: autoencoder --------------------------------------------------------

    def train_autoencoder(self, vcol_name: str, config: TrainConfig = None) -> list:
        if not self.frozen or not self.scalar_encoders:
            raise NotFitted("fit scalar encoders and frozen predictors first")
        if not self.trainable:
            self._init_trainable()
        if vcol_name not in self.trainable:
            raise NotFitted(f"unknown vector column {vcol_name!r}")
        positions = np.array([self.table.position_of(r) for r in self.sample_ids])
        width = self.embedding_width(vcol_name)
        if vcol_name not in self.autoencoders:
            bottleneck = max(8, width // 4)
            hidden = self.config.ae_hidden
            sizes = [width, hidden, bottleneck, hidden, width]
            acts = [RELU, RELU, RELU, IDENTITY]
            self.autoencoders[vcol_name] = FeedForwardNet(
                sizes, acts, seed=self.config.seed * 3000 + 17
            )
        cfg = config or TrainConfig(
            learning_rate=self.config.ae_lr,
            batch_size=self.config.ae_batch,
            epochs=self.config.ae_epochs,
            seed=self.config.seed * 3000 + 23,
        )
        curve = self._ae_joint_fit(vcol_name, positions, cfg)
        self._fitted = True
        return curve

    def _ae_joint_fit(self, vcol_name: str, positions: np.ndarray,
                      cfg: TrainConfig) -> list:
        """Joint gradient descent on the autoencoder and the projector.

        The reconstruction target is the input embedding itself, so the
        projector receives gradient both through the autoencoder and through
        the target side; frozen heads and scalar one-hots are constants.
        """
        ae = self.autoencoders[vcol_name]
        proj = self.trainable[vcol_name]
        V = self.table.vector_matrix(vcol_name)[positions].astype(np.float64)
        F = self.frozen_outputs(vcol_name, V)
        S = self._scalar_matrix(positions)
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        n = len(positions)
        batch = max(1, min(cfg.batch_size, n))
        f_w = F.shape[1]
        t_w = proj.output_dim
        curve = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            epoch = []
            for start in range(0, n, batch):
                idx = order[start : start + batch]
                t_out, t_cache = proj._forward_cache(V[idx])
                E = np.concatenate([F[idx], t_out, S[idx]], axis=1)
                recon, ae_cache = ae._forward_cache(E)
                loss, grad_recon = mse_loss(recon, E)
                ae_grads, grad_E_in = ae._backward(ae_cache, grad_recon)
                # target-side contribution: d mean((recon - E)^2) / dE
                grad_E = grad_E_in - grad_recon
                proj_grads, _ = proj._backward(
                    t_cache, grad_E[:, f_w : f_w + t_w]
                )
                ae.apply_gradients(ae_grads, cfg.learning_rate)
                proj.apply_gradients(proj_grads, cfg.learning_rate)
                epoch.append(loss)
            curve.append(float(np.mean(epoch)))
        return curve

    # -- step 5: scoring ---------------------------------------------------------

    def fit_all(self, sample_fraction: float = None) -> dict:
        """Convenience: full fit pipeline over every vector column."""
        self.fit_scalar_encoders()
        losses = self.train_frozen_predictors(sample_fraction)
        curves = {}
        for vcol in self.table.schema.vector_columns:
            curves[vcol.name] = self.train_autoencoder(vcol.name)
        return {"frozen_losses": losses, "ae_curves": curves}

    @property
    def fitted(self) -> bool:
        return self._fitted

    def _require_fitted(self) -> None:
        if not self._fitted:
            raise NotFitted("encoder bundle has not been trained")

    def embedding_from_values(self, vcol_name: str, v, scalar_values: dict) -> np.ndarray:
        self._require_fitted()
        return np.concatenate(
            [self.encode_vector(vcol_name, v), self.encode_scalar_values(scalar_values)]
        )

    def reconstruction_error_from_embedding(self, vcol_name: str,
                                            emb: np.ndarray) -> float:
        recon = self.autoencoders[vcol_name].forward(emb)
        diff = recon - emb
        return float(np.mean(diff * diff))

    def reconstruction_error_from_values(self, vcol_name: str, v,
                                         scalar_values: dict) -> float:
        emb = self.embedding_from_values(vcol_name, v, scalar_values)
        return self.reconstruction_error_from_embedding(vcol_name, emb)

    def query_scalar_vector(self, predicates) -> np.ndarray:
        """Scalar segment implied by predicates (midpoint / uniform rule)."""
        parts = []
        for col in self.table.schema.scalar_columns:
            spec = self.scalar_encoders[col.name]
            mine = [p for p in predicates if p.column == col.name]
            parts.append(spec.encode_predicates(mine))
        return np.concatenate(parts)

    def reconstruction_error(self, vcol_name: str, q, predicates) -> float:
        """Deviation score for a query's (vector, predicate) pairing."""
        self._require_fitted()
        emb = np.concatenate(
            [self.encode_vector(vcol_name, q), self.query_scalar_vector(predicates)]
        )
        return self.reconstruction_error_from_embedding(vcol_name, emb)

    def reconstruction_errors_for_rows(self, vcol_name: str, ids,
                                       scalar_override: dict = None) -> np.ndarray:
        """Data-side errors for the given row ids, vectorised.

        scalar_override maps column name -> sequence aligned with ids, used
        by shuffle-control experiments.
        """
        self._require_fitted()
        positions = np.array([self.table.position_of(r) for r in ids])
        V = self.table.vector_matrix(vcol_name)[positions].astype(np.float64)
        F = self.frozen_outputs(vcol_name, V)
        T = self.trainable[vcol_name].forward(V)
        S = self._scalar_matrix(positions, scalar_override)
        E = np.concatenate([F, T, S], axis=1)
        recon = self.autoencoders[vcol_name].forward(E)
        return np.mean((recon - E) ** 2, axis=1)

    # -- step 6: incremental updates ------------------------------------------------

    def incremental_update(self, new_ids=None, config: TrainConfig = None) -> dict:
        """Fine-tune frozen heads and autoencoders on newly inserted rows."""
        self._require_fitted()
        if new_ids is None:
            new_ids = list(self.table.pending_updates)
        new_ids = [int(r) for r in new_ids]
        if not new_ids:
            raise EmptyBatch("no new rows to integrate")
        positions = np.array([self.table.position_of(r) for r in new_ids])

        lr = self.config.encoder_lr * self.config.finetune_lr_scale
        epochs = self.config.finetune_epochs
        curves = {}
        seed = self.config.seed * 4000
        for vcol in self.table.schema.vector_columns:
            V = self.table.vector_matrix(vcol.name)[positions].astype(np.float64)
            for scol in self.table.schema.scalar_columns:
                seed += 1
                head = self.frozen[(vcol.name, scol.name)]
                cfg = config or TrainConfig(
                    loss="mse" if scol.kind is ScalarKind.NUMERIC else "cross_entropy",
                    learning_rate=lr,
                    batch_size=self.config.encoder_batch,
                    epochs=epochs,
                    seed=seed,
                )
                head.net.unfreeze()
                try:
                    self._fit_head(head, V, positions, scol, cfg)
                finally:
                    head.net.freeze()
        for vcol in self.table.schema.vector_columns:
            seed += 1
            cfg = config or TrainConfig(
                learning_rate=self.config.ae_lr * self.config.finetune_lr_scale,
                batch_size=self.config.ae_batch,
                epochs=epochs,
                seed=seed,
            )
            curves[vcol.name] = self._ae_joint_fit(vcol.name, positions, cfg)
        remaining = set(self.table.pending_updates) - set(new_ids)
        self.table.pending_updates = [
            r for r in self.table.pending_updates if r in remaining
        ]
        return curves

    # -- persistence --------------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "config_hash": self.config_hash,
            "sample_ids": self.sample_ids,
            "fitted": self._fitted,
            "scalar_encoders": {
                name: spec.to_json() for name, spec in self.scalar_encoders.items()
            },
            "frozen": {},
        }
        for (vname, sname), head in self.frozen.items():
            key = f"frozen__{vname}__{sname}"
            head.net.save(os.path.join(directory, key + ".bin"))
            manifest["frozen"][key] = {
                "vector": vname,
                "scalar": sname,
                "kind": head.kind.value,
                "mean": head.mean,
                "std": head.std,
                "categories": head.categories,
            }
        for vname, net in self.trainable.items():
            net.save(os.path.join(directory, f"trainable__{vname}.bin"))
        for vname, net in self.autoencoders.items():
            net.save(os.path.join(directory, f"autoencoder__{vname}.bin"))
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, directory, table: Table, config: EngineConfig) -> "EncoderBundle":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        bundle = cls(table, config)
        bundle.config_hash = manifest["config_hash"]
        bundle.sample_ids = [int(r) for r in manifest["sample_ids"]]
        bundle.scalar_encoders = {
            name: ScalarEncoderSpec.from_json(spec)
            for name, spec in manifest["scalar_encoders"].items()
        }
        for key, meta in manifest["frozen"].items():
            net = FeedForwardNet.load(os.path.join(directory, key + ".bin"))
            bundle.frozen[(meta["vector"], meta["scalar"])] = _FrozenHead(
                net=net,
                kind=ScalarKind(meta["kind"]),
                mean=meta["mean"],
                std=meta["std"],
                categories=meta["categories"],
            )
        for vcol in table.schema.vector_columns:
            t_path = os.path.join(directory, f"trainable__{vcol.name}.bin")
            if os.path.exists(t_path):
                bundle.trainable[vcol.name] = FeedForwardNet.load(t_path)
            a_path = os.path.join(directory, f"autoencoder__{vcol.name}.bin")
            if os.path.exists(a_path):
                bundle.autoencoders[vcol.name] = FeedForwardNet.load(a_path)
        bundle._fitted = bool(manifest["fitted"])
        return bundle
