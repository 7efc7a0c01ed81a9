"""Write a planted-artifact generator, its clean twin and a discriminator for the demo config."""

from claprobe.gymkit import TrainConfig, build_gan, plant_artifact_generator
from claprobe.netcore import save_model_file

cfg = TrainConfig(latent_dim=2, data_dim=8, gen_hidden=(16, 16, 16), disc_hidden=(16,), seed=0)
fx = plant_artifact_generator(cfg, [0.5, 0.5], radius=1.0, amplitude=4.0)
save_model_file(fx.planted, "planted.bin")
save_model_file(fx.clean, "clean.bin")
save_model_file(build_gan(cfg)[1], "disc.bin")
