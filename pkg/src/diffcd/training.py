"""Joint training orchestration: the per-epoch pipeline, loss accounting,
early stopping, ablation switches, checkpointing, and seeding.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluation
from .alignment import AlignmentConfig, FusionNet, fuse, relation_loss, semantic_loss
from .autodiff import Tensor, backward
from .cdm import CdmHead, TransformLayer, bce, transform
from .data import ResponseDataset, SplitSpec, inject_noise
from .data import split as make_split
from .data import split_stratified
from .diffusion import (ConditionalDenoiser, Denoiser, DiffusionSchedule,
                        cond_loss, noise_then_denoise, uncond_loss)
from .errors import ContractError, TrainingError
from .graphs import augment, decompose, lightgcn, sym_normalize
from .io import append_history, save_checkpoint, write_manifest
from .optim import Adam, named_stream, param
from .semantics import MockEmbeddingClient, SemanticTable, build_prompts, fetch_embeddings


@dataclass
class RunConfig:
    """Full run configuration; every field lands in the emitted manifest."""

    head: str = "ncdm"
    latent_dim: int | None = None  # 32 for irt/mirt, Z otherwise
    layers: int = 3
    batch_size: int = 4096
    lr: float = 0.04
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    lam: float = 1e-3  # weight of the auxiliary losses
    rho: float = 0.1  # weight of the unconditional diffusion loss
    temperature: float = 0.5
    negative_policy: str = "full"
    T: int = 50
    t_star: int = 5
    raa: bool = True
    ddm_u: bool = True
    ddm_c: bool = True
    semantic: bool = True
    plain: bool = False  # pure-BCE backbone; equivalent to lam = 0
    reduction: str = "mean"
    hidden: tuple = (512, 256)
    resample_augmentation: bool = False
    deterministic: bool = True
    stratified_split: bool = False
    noise_level: float = 0.0
    noise_mode: str = "add"
    mock_semantic: bool = False  # hash-derived stand-in embeddings (tests only)
    mock_embedding_dim: int = 64
    subject: str = "elementary mathematics"

    def resolve_dim(self, num_concepts: int) -> int:
        if self.latent_dim is not None:
            return self.latent_dim
        return 32 if self.head in ("irt", "mirt") else num_concepts

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(d["hidden"])
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.as_dict(), sort_keys=True).encode()
        ).hexdigest()[:12]


KNOWN_ABLATION_FLAGS = ("raa", "ddm_u", "ddm_c", "semantic")


def ablate(config: RunConfig, flags: dict) -> RunConfig:
    """Return a copy with the named module switches turned off/on."""
    for name in flags:
        if name not in KNOWN_ABLATION_FLAGS:
            raise ContractError(f"unknown ablation flag {name!r}")
    return dataclasses.replace(config, **{k: bool(v) for k, v in flags.items()})


class Pipeline:
    """Holds parameters, fixed graph structure, and the per-epoch step."""

    def __init__(self, ds: ResponseDataset, split_spec: SplitSpec, cfg: RunConfig,
                 semantic_table: SemanticTable | None = None):
        ds.validate()
        self.ds = ds
        self.split = split_spec
        self.cfg = cfg
        self.N, self.M, self.Z = ds.num_students, ds.num_exercises, ds.num_concepts
        self.d = cfg.resolve_dim(self.Z)
        self._log_s = np.array([s for s, _, _ in ds.logs], dtype=np.int64)
        self._log_e = np.array([e for _, e, _ in ds.logs], dtype=np.int64)
        self._log_r = np.array([r for _, _, r in ds.logs], dtype=np.float64)
        self.lam = 0.0 if cfg.plain else cfg.lam
        self.aux_active = self.lam > 0.0
        seed = cfg.seed

        # graph structure from the training split only
        pair = decompose(ds, split_spec.train)
        self.a_cor = sym_normalize(pair.a_cor)
        self.a_incor = sym_normalize(pair.a_incor)
        self.use_raa = self.aux_active and cfg.raa
        if self.use_raa:
            self._raw_pair = pair
            self._resample_augmentation(epoch=None)
        else:
            self.a_cor_aug, self.a_incor_aug = self.a_cor, self.a_incor

        # shared trainable tables and networks
        self.nodes = param("embed/nodes", (self.N + self.M, self.d), seed)
        self.concepts = param("embed/concepts", (self.Z, self.d), seed)
        self.fusion = FusionNet(
            weight=param("fusion/w", (2 * self.d, self.d), seed),
            bias=param("fusion/b", (1, self.d), seed, scheme="zeros"),
        )
        head_dim = self.d if cfg.head in ("irt", "mirt") else self.Z
        self.transform_layer = None
        if cfg.head in ("ncdm", "cdmfkc") and self.d != self.Z:
            self.transform_layer = TransformLayer(
                self.d, self.Z, self.N + self.M + self.Z, seed)
        self.head = CdmHead(cfg.head, head_dim, self.M, self.Z, seed, hidden=cfg.hidden)
        if cfg.head in ("ncdm", "cdmfkc"):
            rate = float(np.mean([ds.logs[i][2] for i in split_spec.train]))
            rate = min(max(rate, 1e-3), 1.0 - 1e-3)
            self.head.set_output_bias(np.log(rate / (1.0 - rate)))

        self.align_cfg = AlignmentConfig(cfg.temperature, cfg.negative_policy)
        self.sched = DiffusionSchedule(cfg.T)
        self.denoiser = self.cond_denoiser = None
        if self.aux_active:
            self.denoiser = Denoiser(self.d, seed, name="ddm/uncond")
            self.cond_denoiser = ConditionalDenoiser(
                Denoiser(self.d, seed, name="ddm/cond_base"), seed, name="ddm/cond")

        self.semantic_on = self.aux_active and cfg.semantic
        self.sem_students = self.sem_exercises = None
        if self.semantic_on and (self.N <= self.d or self.M <= self.d):
            warnings.warn("too few entities for PCA to the latent dimension; "
                          "semantic alignment disabled")
            self.semantic_on = False
        if self.semantic_on:
            table = semantic_table
            if table is None and cfg.mock_semantic:
                table = self._mock_semantic_table()
            elif table is None:
                warnings.warn("no embedding table supplied; semantic alignment "
                              "disabled (set mock_semantic for stand-in vectors)")
            if table is None:
                self.semantic_on = False
            else:
                if table.students is None:
                    table.project(self.d)
                self.sem_students = np.asarray(table.students)
                self.sem_exercises = np.asarray(table.exercises)

        self.params = self._collect_params()
        self.opt = Adam(self.params, lr=cfg.lr)

    # -- setup helpers -------------------------------------------------------
    def _resample_augmentation(self, epoch) -> None:
        tag = "" if epoch is None else f"/{epoch}"
        self.a_cor_aug = sym_normalize(
            augment(self._raw_pair.a_cor, self.N, self.cfg.seed, f"augment-cor{tag}"))
        self.a_incor_aug = sym_normalize(
            augment(self._raw_pair.a_incor, self.N, self.cfg.seed, f"augment-incor{tag}"))

    def _mock_semantic_table(self) -> SemanticTable:
        bundle = build_prompts(self.ds, self.split.train, subject=self.cfg.subject)
        client = MockEmbeddingClient(dim=self.cfg.mock_embedding_dim, seed=self.cfg.seed)
        s_raw = fetch_embeddings(
            [bundle.student_prompt(i) for i in range(self.N)], client)
        e_raw = fetch_embeddings(
            [bundle.exercise_prompt(j) for j in range(self.M)], client)
        return SemanticTable(s_raw, e_raw).project(self.d)

    def _collect_params(self) -> list:
        params = [self.nodes, self.concepts] + self.fusion.params
        if self.transform_layer is not None:
            params += self.transform_layer.params
        params += self.head.params
        if self.denoiser is not None:
            params += self.denoiser.params
        if self.cond_denoiser is not None:
            params += self.cond_denoiser.all_params
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names")
        return params

    # -- forward pieces --------------------------------------------------------
    def _propagate(self):
        h_cor = lightgcn(self.a_cor, self.nodes, self.cfg.layers)
        h_incor = lightgcn(self.a_incor, self.nodes, self.cfg.layers)
        return h_cor, h_incor

    @staticmethod
    def _latent_scale(arr: np.ndarray) -> float:
        """Std of a detached latent block; the diffusion process assumes
        unit-variance inputs, so latents are scaled by this factor."""
        s = float(np.std(np.asarray(arr)))
        return s if s > 0.0 else 1.0

    def _two_stage(self, x: Tensor, c: Tensor, stream: str) -> Tensor:
        """Apply the enabled refinement stages with a dedicated rng stream."""
        cfg = self.cfg
        rng = named_stream(cfg.seed, stream)
        sx = self._latent_scale(x.data)
        sc = self._latent_scale(c.data)
        x = x * (1.0 / sx)
        c = c * (1.0 / sc)
        if cfg.ddm_u and self.denoiser is not None:
            x = noise_then_denoise(x, cfg.t_star, self.denoiser.predict, self.sched, rng)
        if cfg.ddm_c and self.cond_denoiser is not None:
            x = noise_then_denoise(
                x, cfg.t_star,
                lambda xx, tt: self.cond_denoiser.predict(xx, tt, c),
                self.sched, rng)
        return x * sx

    def _refine_for_inference(self) -> bool:
        return self.aux_active and (self.cfg.ddm_u or self.cfg.ddm_c)

    def _head_rows(self, fused: Tensor) -> Tensor:
        all_rows = ad.concat([fused, self.concepts], axis=0)
        return transform(all_rows, self.transform_layer)

    def representations(self, stream: str = "eval-refine") -> Tensor:
        """Inference-path node rows: fused, refined when diffusion is active,
        then dimension-aligned."""
        h_cor, h_incor = self._propagate()
        fused = fuse(h_cor, h_incor, self.fusion)
        if self._refine_for_inference():
            fused = self._two_stage(fused, fused, stream)
        return self._head_rows(fused)

    def predict_logs(self, log_indices, stream: str = "eval-refine") -> np.ndarray:
        """Response probabilities for the given log rows (inference path)."""
        rows = self.representations(stream)
        s_ids = np.array([self.ds.logs[i][0] for i in log_indices], dtype=np.int64)
        e_ids = np.array([self.ds.logs[i][1] for i in log_indices], dtype=np.int64)
        h_s = ad.take_rows(rows, s_ids)
        h_e = ad.take_rows(rows, self.N + e_ids)
        q_rows = self.ds.q_matrix[e_ids]
        return self.head.predict(h_s, h_e, None, q_rows, e_ids).data.ravel()

    def mastery_report(self, stream: str = "eval-refine") -> np.ndarray:
        rows = self.representations(stream)
        return self.head.mastery(rows.data[:self.N])

    # -- training ---------------------------------------------------------------
    def epoch_step(self, epoch: int) -> dict:
        """One full epoch; returns the logged loss terms."""
        cfg = self.cfg
        if self.use_raa and cfg.resample_augmentation and epoch > 0:
            self._resample_augmentation(epoch)

        h_cor, h_incor = self._propagate()
        fused = fuse(h_cor, h_incor, self.fusion)

        terms = {"relation": 0.0, "semantic": 0.0, "uncond": 0.0, "cond": 0.0}
        align_loss = None
        x0 = c0 = None
        if self.aux_active:
            if self.use_raa:
                h_cor_aug = lightgcn(self.a_cor_aug, self.nodes, cfg.layers)
                h_incor_aug = lightgcn(self.a_incor_aug, self.nodes, cfg.layers)
            else:
                h_cor_aug, h_incor_aug = h_cor, h_incor
            ref_cor = self._two_stage(h_cor_aug, h_cor, f"refine/cor/{epoch}")
            ref_incor = self._two_stage(h_incor_aug, h_incor, f"refine/incor/{epoch}")
            l_rel = relation_loss((h_cor, h_incor), (ref_cor, ref_incor),
                                  self.N, self.align_cfg)
            align_loss = l_rel
            terms["relation"] = l_rel.item()

            if self.semantic_on:
                f_s = ad.take_rows(fused, np.arange(self.N))
                f_e = ad.take_rows(fused, np.arange(self.N, self.N + self.M))
                sem_s = self._two_stage(Tensor(self.sem_students), f_s,
                                        f"refine/sem-s/{epoch}")
                sem_e = self._two_stage(Tensor(self.sem_exercises), f_e,
                                        f"refine/sem-e/{epoch}")
                l_sem = semantic_loss(f_s, sem_s, f_e, sem_e, self.align_cfg)
                align_loss = align_loss + l_sem
                terms["semantic"] = l_sem.item()

            x0_blocks = [h_cor_aug.data, h_incor_aug.data]
            c_blocks = [h_cor.data, h_incor.data]
            if self.semantic_on:
                x0_blocks += [self.sem_students, self.sem_exercises]
                c_blocks += [fused.data[:self.N], fused.data[self.N:]]
            x0 = np.vstack(x0_blocks)
            c0 = np.vstack(c_blocks)
            x0 = x0 / self._latent_scale(x0)
            c0 = c0 / self._latent_scale(c0)
            if cfg.ddm_u:
                l_unc = uncond_loss(x0, self.denoiser, self.sched,
                                    named_stream(cfg.seed, f"ddm-u/{epoch}"))
                align_loss = align_loss + l_unc * cfg.rho
                terms["uncond"] = l_unc.item()
            if cfg.ddm_c:
                l_cond = cond_loss(x0, c0, self.cond_denoiser, self.sched,
                                   named_stream(cfg.seed, f"ddm-c/{epoch}"))
                align_loss = align_loss + l_cond
                terms["cond"] = l_cond.item()

        head_input = fused
        if self._refine_for_inference():
            # the head trains on the same refined representations it will
            # see at inference, so BCE gradients also shape the denoisers
            head_input = self._two_stage(fused, fused, f"refine/head/{epoch}")
        rows = self._head_rows(head_input)
        order = named_stream(cfg.seed, f"batch/{epoch}").permutation(len(self.split.train))
        train_idx = [self.split.train[i] for i in order]
        bce_total = 0.0
        for b_start in range(0, len(train_idx), cfg.batch_size):
            batch = train_idx[b_start:b_start + cfg.batch_size]
            s_ids = np.array([self.ds.logs[i][0] for i in batch], dtype=np.int64)
            e_ids = np.array([self.ds.logs[i][1] for i in batch], dtype=np.int64)
            labels = np.array([self.ds.logs[i][2] for i in batch], dtype=np.float64)
            h_s = ad.take_rows(rows, s_ids)
            h_e = ad.take_rows(rows, self.N + e_ids)
            y_hat = self.head.predict(h_s, h_e, None, self.ds.q_matrix[e_ids], e_ids)
            l_bce = bce(y_hat, labels, cfg.reduction)
            loss = l_bce
            if align_loss is not None and b_start == 0:
                # graph / alignment / diffusion terms are computed once per
                # epoch and ride along with the first batch's update
                loss = loss + align_loss * self.lam
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    "non-finite training loss; terms: "
                    + json.dumps({**terms, "bce": l_bce.item()}, sort_keys=True))
            self.opt.zero_grad()
            backward(loss, self.params)
            self.opt.step()
            self.head.project_nonneg()
            bce_total += l_bce.item()

        terms["bce"] = bce_total
        terms["total"] = bce_total + self.lam * (
            terms["relation"] + terms["semantic"]
            + cfg.rho * terms["uncond"] + terms["cond"])
        return terms

    def evaluate_split(self, indices, stream: str) -> dict:
        scores = self.predict_logs(indices, stream)
        labels = np.array([self.ds.logs[i][2] for i in indices], dtype=np.float64)
        auc = evaluation.auc(scores, labels)
        return {
            "acc": evaluation.acc(scores, labels),
            "auc": auc,
            "f1": evaluation.f1(scores, labels),
        }

    def snapshot(self) -> dict:
        arrays = {p.name: p.data.copy() for p in self.params}
        arrays.update(self.opt.state_arrays())
        return arrays

    def restore(self, arrays: dict) -> None:
        for p in self.params:
            p.assign_(np.array(arrays[p.name]))
        self.opt.load_state_arrays(arrays)


@dataclass
class TrainResult:
    config: RunConfig
    history: list
    best_epoch: int
    best_val: dict
    test_metrics: dict
    pipeline: Pipeline
    checkpoint_arrays: dict = field(repr=False, default=None)


def train(cfg: RunConfig, ds: ResponseDataset, split_spec: SplitSpec | None = None,
          semantic_table: SemanticTable | None = None,
          out_dir: str | None = None) -> TrainResult:
    """Train to early stopping on validation AUC and return the best model.

    Writes manifest, per-epoch history, final metrics, and the best
    checkpoint under `out_dir` when given.
    """
    if split_spec is None:
        maker = split_stratified if cfg.stratified_split else make_split
        split_spec = maker(ds, cfg.seed)
    if cfg.noise_level > 0:
        ds, split_spec, _ = inject_noise(ds, cfg.noise_level, cfg.seed,
                                         split_spec, mode=cfg.noise_mode)

    history_path = manifest_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        manifest_path = os.path.join(out_dir, "manifest.json")
        write_manifest(manifest_path, {
            "config": cfg.as_dict(),
            "config_hash": cfg.config_hash(),
            "num_students": ds.num_students,
            "num_exercises": ds.num_exercises,
            "num_concepts": ds.num_concepts,
            "num_logs": len(ds.logs),
            "split_seed": split_spec.seed,
            "note": "student filtering (if any) runs after de-duplication",
        })
        history_path = os.path.join(out_dir, "history.jsonl")
        if os.path.exists(history_path):
            os.remove(history_path)

    pipe = Pipeline(ds, split_spec, cfg, semantic_table)
    history = []
    best_metric = -np.inf
    best_epoch = -1
    best_val = {}
    best_arrays = pipe.snapshot()
    stale = 0
    for epoch in range(cfg.epochs):
        terms = pipe.epoch_step(epoch)
        val = pipe.evaluate_split(pipe.split.val, f"eval-refine/{epoch}")
        record = {"epoch": epoch, **{k: float(v) for k, v in terms.items()},
                  "val_acc": val["acc"],
                  "val_auc": val["auc"] if val["auc"] is not None else -1.0,
                  "val_f1": val["f1"]}
        history.append(record)
        if history_path:
            append_history(history_path, record)
        metric = val["auc"] if val["auc"] is not None else val["acc"]
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_val = val
            best_arrays = pipe.snapshot()
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    pipe.restore(best_arrays)
    test = pipe.evaluate_split(pipe.split.test, "eval-refine/test")
    if cfg.head in ("ncdm", "cdmfkc"):
        mastery = pipe.mastery_report("eval-refine/test")
        test_logs = [ds.logs[i] for i in pipe.split.test]
        test["doa"] = evaluation.doa(mastery, test_logs, ds.q_matrix)
    else:
        test["doa"] = None

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), best_arrays, {
            "config_hash": cfg.config_hash(),
            "config": cfg.as_dict(),
            "epoch": best_epoch,
            "seed": cfg.seed,
        })
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump({"best_epoch": best_epoch, "val": best_val, "test": test},
                      fh, sort_keys=True, indent=2)
            fh.write("\n")

    return TrainResult(cfg, history, best_epoch, best_val, test, pipe, best_arrays)
