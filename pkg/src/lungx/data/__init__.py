from .augment import AugmentConfig, augment_train, preprocess_eval
from .manifest import ImageSample, Manifest, ManifestError, ManifestRecord, decode_image, load_manifest
from .pgm import ImageFormatError, read_pgm, write_pgm
from .sampler import weighted_sampler
from .synth import SyntheticSpec, synth_dataset

__all__ = [
    "AugmentConfig", "augment_train", "preprocess_eval", "ImageSample", "Manifest",
    "ManifestError", "ManifestRecord", "decode_image", "load_manifest", "ImageFormatError",
    "read_pgm", "write_pgm", "weighted_sampler", "SyntheticSpec", "synth_dataset",
]
