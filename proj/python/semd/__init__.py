"""Single-image 3D point cloud reconstruction with one encoder and N viewpoint decoders."""

from ._semd import (
    Network,
    SemdError,
    chamfer,
    emd,
    euclid,
    evaluate,
    finetune,
    generate_shape,
    pretrain,
    read_ply,
    resample,
    run_cli,
    write_ply,
)

__all__ = [
    "Network",
    "SemdError",
    "chamfer",
    "emd",
    "euclid",
    "evaluate",
    "finetune",
    "generate_shape",
    "pretrain",
    "read_ply",
    "resample",
    "run_cli",
    "write_ply",
]
