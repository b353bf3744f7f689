"""figgen: desk-scale text-to-figure latent diffusion.

Pipeline stages: figure corpus preparation, a KL image autoencoder,
a transformer text encoder trained end-to-end with a conditional
denoising U-Net, DDIM sampling with classifier-free guidance, and a
FID/IS/KID/OCR-SIM evaluation suite.
"""

__version__ = "0.1.0"
