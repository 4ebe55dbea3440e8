"""
The task network and its supervised variational autoencoder (SVAE) side branch.

    x --phi--> f --psi--> y_hat
               |
               +--(stop-gradient)--> variational encoder --> (mu, logvar)
                                      z = mu + sigma * eps
                                      z --decoder--> f_hat
                                      z --psi_svae--> y_hat_svae

The branch sees the encoder's features but, with isolation on, sends no
gradient back into phi: L_SVAE only trains the branch.

"""

from dataclasses import dataclass

import numpy as np

from autograd.tensor import DomainError, ShapeError, Tensor, as_tensor, no_grad
from learning.enums import Stream, Task
from learning.utils import derive_rng

from .layers import MLP, Affine


class ArchitectureError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Architecture:
    """
    Sizes of every part of the network.

    """

    task: Task
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (64,)
    feature_dim: int = 64
    latent_dim: int = 16
    with_svae: bool = True
    isolate_svae: bool = True
    zero_init_heads: bool = False

    def validate(self):
        dims = (self.input_dim, self.num_classes, self.feature_dim, self.latent_dim, *self.hidden_dims)
        if any(int(dim) <= 0 for dim in dims):
            raise ArchitectureError(f"All network dimensions must be positive, got {dims}.")
        if self.task is Task.SEGMENTATION and self.num_classes < 2:
            raise ArchitectureError("Segmentation needs at least two classes.")


class EncoderPhi(MLP):
    """
    Maps raw inputs x (batch x F, or batch x pixels x F) to features f of width D.

    """

    __slots__ = ()


class TaskHeadPsi(Affine):
    """
    Affine map from features (or latents) to C logits, per sample or per pixel.

    """

    __slots__ = ()


class PsiSvae(TaskHeadPsi):
    """
    The branch's own task head, reading z. Same shape of map as psi, disjoint
    parameters.

    """

    __slots__ = ()


class FeatureDecoder(Affine):
    __slots__ = ()


class VariationalEncoder:
    """
    One affine map f -> [mu | logvar], each of width J.

    """

    __slots__ = ("layer", "latent_dim")

    def __init__(self, layer: Affine, latent_dim: int):
        self.layer = layer
        self.latent_dim = latent_dim

    def __call__(self, features: Tensor) -> tuple[Tensor, Tensor]:
        stats = self.layer(features)
        return stats[..., :self.latent_dim], stats[..., self.latent_dim:]

    def parameters(self) -> dict:
        return self.layer.parameters()


class SvaeBranch:
    __slots__ = ("encoder", "decoder", "head", "isolate")

    def __init__(self, encoder: VariationalEncoder, decoder: FeatureDecoder, head: PsiSvae, isolate: bool = True):
        self.encoder = encoder
        self.decoder = decoder
        self.head = head
        self.isolate = isolate

    def parameters(self) -> dict:
        params = {}
        for part in (self.encoder, self.decoder, self.head):
            params.update(part.parameters())
        return params


@dataclass
class SvaeForward:
    """
    Everything one branch pass produced. `z == mu + sigma * epsilon` holds for
    the recorded epsilon.

    """

    features: Tensor
    mu: Tensor
    logvar: Tensor
    sigma: Tensor
    epsilon: np.ndarray
    z: Tensor
    reconstruction: Tensor
    svae_logits: Tensor
    logits: Tensor | None = None


def forward_main(x, encoder: EncoderPhi, head: TaskHeadPsi) -> tuple[Tensor, Tensor]:
    """
    Run phi then psi.

    Args:
        x (array or Tensor): batch x F, or batch x pixels x F.

    Returns:
        tuple: (features, logits).

    Raises:
        ShapeError: If x does not fit the encoder.

    """
    x = as_tensor(x)
    expected = encoder.layers[0].fan_in
    if x.ndim not in (2, 3) or x.shape[-1] != expected:
        raise ShapeError(f"forward_main: input of shape {x.shape} does not end in {expected} features")
    features = encoder(x)
    return features, head(features)


def forward_svae(features: Tensor, branch: SvaeBranch, rng: np.random.Generator, epsilon=None,
                 logits: Tensor | None = None) -> SvaeForward:
    """
    Run the SVAE branch on features with one reparameterized draw per sample.

    Args:
        features (Tensor): Output of `forward_main`.
        branch (SvaeBranch): Variational encoder, decoder and psi_svae.
        rng (Generator): Source of epsilon ~ N(0, I).
        epsilon (array, optional): Use this draw instead of sampling.
        logits (Tensor, optional): The main head's logits for the same batch,
            carried on the result.

    Raises:
        DivergenceError: If the latent statistics stop being finite.

    """
    branch_input = features.stop_gradient() if branch.isolate else features
    try:
        mu, logvar = branch.encoder(branch_input)
        sigma = (logvar * 0.5).exp()
    except DomainError as err:
        raise DivergenceError(f"SVAE latent statistics diverged: {err}") from err

    if epsilon is None:
        epsilon = rng.standard_normal(mu.shape)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != mu.shape:
        raise ShapeError(f"forward_svae: epsilon of shape {epsilon.shape} does not match {mu.shape}")

    z = mu + sigma * epsilon
    return SvaeForward(
        features=branch_input,
        mu=mu,
        logvar=logvar,
        sigma=sigma,
        epsilon=epsilon,
        z=z,
        reconstruction=branch.decoder(z),
        svae_logits=branch.head(z),
        logits=logits,
    )


class Network:
    """
    phi and psi, plus the SVAE branch when the method uses one.

    """

    __slots__ = ("architecture", "encoder", "head", "branch")

    def __init__(self, architecture: Architecture, encoder: EncoderPhi, head: TaskHeadPsi, branch: SvaeBranch | None = None):
        self.architecture = architecture
        self.encoder = encoder
        self.head = head
        self.branch = branch

    @property
    def task(self) -> Task:
        return self.architecture.task

    def forward_main(self, x) -> tuple[Tensor, Tensor]:
        return forward_main(x, self.encoder, self.head)

    def forward_svae(self, features: Tensor, rng: np.random.Generator, epsilon=None,
                     logits: Tensor | None = None) -> SvaeForward:
        if self.branch is None:
            raise ArchitectureError("This network was built without an SVAE branch.")
        return forward_svae(features, self.branch, rng, epsilon=epsilon, logits=logits)

    def main_parameters(self) -> dict:
        params = dict(self.encoder.parameters())
        params.update(self.head.parameters())
        return params

    def svae_parameters(self) -> dict:
        return self.branch.parameters() if self.branch else {}

    def parameters(self) -> dict:
        params = self.main_parameters()
        params.update(self.svae_parameters())
        return params

    def snapshot(self) -> dict:
        return {name: param.data.copy() for name, param in self.parameters().items()}

    def load_state(self, state: dict):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ArchitectureError(f"State is missing parameters: {sorted(missing)}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ArchitectureError(
                    f"Parameter {name} has shape {param.shape}, state holds {value.shape}."
                )
            param.data[...] = value

    def predict(self, x) -> np.ndarray:
        """
        Class probabilities (multilabel) or per-pixel class indices
        (segmentation), computed without recording.

        """
        with no_grad():
            _, logits = self.forward_main(x)
        if self.task is Task.SEGMENTATION:
            return logits.data.argmax(axis=-1)
        return logits.sigmoid().data


def init_params(architecture: Architecture, seed: int) -> Network:
    """
    Build every parameter tensor of the network, deterministic per seed.

    The main and SVAE parameters come from separate random streams, so a
    network built without the branch has the same phi and psi as one built
    with it.

    Raises:
        ArchitectureError: If any dimension is not positive.

    """
    architecture.validate()
    main_rng = derive_rng(seed, Stream.INIT_MAIN)
    widths = [architecture.input_dim, *architecture.hidden_dims, architecture.feature_dim]
    encoder = EncoderPhi.initialize("phi", widths, main_rng)
    head = TaskHeadPsi.initialize(
        "psi", architecture.feature_dim, architecture.num_classes, main_rng,
        zero=architecture.zero_init_heads,
    )

    branch = None
    if architecture.with_svae:
        svae_rng = derive_rng(seed, Stream.INIT_SVAE)
        latent = architecture.latent_dim
        branch = SvaeBranch(
            VariationalEncoder(
                Affine.initialize("svae.encoder", architecture.feature_dim, 2 * latent, svae_rng),
                latent,
            ),
            FeatureDecoder.initialize("svae.decoder", latent, architecture.feature_dim, svae_rng),
            PsiSvae.initialize(
                "svae.psi", latent, architecture.num_classes, svae_rng,
                zero=architecture.zero_init_heads,
            ),
            isolate=architecture.isolate_svae,
        )
    return Network(architecture, encoder, head, branch)
