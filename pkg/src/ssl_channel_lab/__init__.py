"""Semi-supervised neural decoders for an unknown nonlinear memoryless channel.

The package simulates 16-QAM transmission through a device-specific
impairment chain (I/Q imbalance, Rayleigh fading, additive white complex
Gaussian noise) and benchmarks several receivers that must learn the channel
from a handful of pilot symbols plus the unlabeled payload:

* ``all_pilots`` - supervised training on a fully labeled block (genie bound)
* ``sdd``        - decision-directed self-training of a classifier
* ``mcem``       - Monte-Carlo expectation-maximization of a generative model
* ``viterbi_em`` - hard-decision variant of the above
* ``vae``        - joint encoder/generative training with a Gumbel-softmax
  relaxation of the categorical latent symbol
* ``optimal``    - maximum likelihood with the true channel known

See ``harness`` for the experiment driver and the ``ssl-channel-lab`` CLI.
"""

__version__ = "0.1.0"
