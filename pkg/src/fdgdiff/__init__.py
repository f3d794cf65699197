"""Frequency-domain analysis and patch-diffusion restoration of compressed hazy images."""

from .image_core import psnr, rgb_to_ycbcr, ssim, to_float, to_u8, ycbcr_to_rgb
from .jpeg_codec import dct2d, idct2d, quant_table_for_qf, simulate_jpeg

__all__ = ["dct2d", "idct2d", "psnr", "quant_table_for_qf", "rgb_to_ycbcr", "simulate_jpeg", "ssim",
           "to_float", "to_u8", "ycbcr_to_rgb"]
__version__ = "0.1.0"
