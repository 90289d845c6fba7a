"""From-scratch differentiable conv net and the cross-modality GAN."""

from .gradcheck import gradient_check
from .infer import infer
from .io import load_weights, read_weights, save_weights, write_weights
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    config_from_params,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .tensor import Tensor4, backward, conv2d, leaky_relu, sigmoid, tanh_out, upsample_nearest
from .train import AdamState, TrainConfig, adam_step, gan_losses, train
