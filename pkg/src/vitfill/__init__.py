"""ViT self-attention prefill for image inpainting, at desk scale."""

from .composer import finalize, prefill
from .config import TrainConfig, load_config, reference_preset
from .imageio import Corpus, ingest_corpus, load_image, save_image
from .masking import MaskSpec, apply_mask, sample_mask
from .metrics import psnr, psnr_masked, ssim
from .patching import PatchScheme, depatchify, patchify, token_count
from .vit import ViTConfig, init_vit, vit_forward

__version__ = "0.1.0"
