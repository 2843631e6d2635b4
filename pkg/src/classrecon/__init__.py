"""classrecon: class-reconstruction (model-inversion) attacks on face classifiers.

Given a leaked classifier and the visible half of its training distribution,
reconstruct representative images of the unseen classes via three generative
routes (noise-path diffusion, conditional GAN, VAE latent fine-tuning) and
score them with a held-out classifier.
"""

from .checkpointing import ModelCheckpoint, load_checkpoint
from .classifiers import ClassifierSpec, pixel_space_attack, predict_probs, top1_accuracy, train_classifier
from .config import ExperimentConfig, default_config, load_config
from .data import AttackScenario, FaceDataset, load_dataset, make_scenario, visible_pool
from .diffusion import (
    DiffusionTrainConfig,
    NoisePath,
    VarianceSchedule,
    build_schedule,
    denoise_step,
    forward_noise,
    sample,
    sample_noise_path,
    train_diffusion,
)
from .evaluation import EvaluationReport, build_report, export_grid, transfer_confidence
from .gan import DiscriminatorBatch, GanAttackConfig, discriminator_accuracy, generator_loss, train_attack_gan
from .path_attack import PathAttackConfig, attack, gradient_of_path_loss, lr_study
from .pipeline import run_pipeline, seed_everything
from .results import AttackResult, load_result, save_result
from .vae import LatentAttackConfig, VaeSpec, encode, latent_attack, train_vae

__version__ = "0.1.0"
