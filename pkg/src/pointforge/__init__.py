"""pointforge: multi-domain point-cloud self-supervised pretraining sandbox.

Library layout:

- pcdata     point-cloud container, validation, PLY and native file IO
- harmonize  granularity rescaling, grid sampling, geometric augmentation
- modality   unified 9-wide feature interface and causal blinding
- serialize  Morton serialization, attention windows, grid pooling
- rope       3D rotary positional embedding and coordinate perturbation
- encoder    serialized-attention encoder with exact reverse-mode gradients
- distill    teacher-student EMA self-distillation trainer
- synthbench synthetic multi-domain data, probes, and ablation harnesses
- cli        command-line entry points (synth / pretrain / probe / ablate / featurize)
"""

__version__ = "0.1.0"
