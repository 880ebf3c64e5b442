"""Noise-robust graph-based cognitive diagnosis with latent denoising."""

from .alignment import AlignmentConfig, FusionNet, fuse, info_nce, relation_loss, semantic_loss
from .autodiff import Tensor, backward, zero_grads
from .cdm import CdmHead, TransformLayer, bce, transform
from .data import (NoiseSpec, ResponseDataset, SplitSpec, inject_noise,
                   load_dataset, save_dataset, split, split_stratified)
from .diffusion import (ConditionalDenoiser, Denoiser, DiffusionSchedule,
                        cond_loss, forward_sample, noise_then_denoise, refine,
                        reverse_step, sample_chain, time_embedding, uncond_loss)
from .errors import ContractError, DataError, DiffcdError, ShapeError, TrainingError
from .estimator import NoiseRobustDiagnoser
from .evaluation import acc, aggregate_seeds, auc, doa, f1, mean_std_str, noise_sweep, rho_sweep
from .graphs import SubgraphPair, augment, decompose, lightgcn, sym_normalize
from .io import load_checkpoint, read_history, save_checkpoint, write_manifest
from .optim import Adam, named_stream, param, xavier_init
from .semantics import (HttpEmbeddingClient, MockEmbeddingClient, PromptBundle,
                        SemanticTable, build_prompts, fetch_embeddings,
                        pca_project, read_embedding_file, write_embedding_file)
from .sparse import SparseMatrix, spmm
from .synthetic import generate_dina
from .training import Pipeline, RunConfig, TrainResult, ablate, train

__version__ = "0.1.0"
