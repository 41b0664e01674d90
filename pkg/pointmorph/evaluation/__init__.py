"""Synthetic scenes, scene bundles and masked-PSNR evaluation."""
