"""Python bindings for the blendgan C++ toolkit.

Images are float32 arrays of shape (3, H, W) with values in [-1, 1].
"""

import torch  # noqa: F401  (loads the libtorch shared libraries)

from ._blendgan import (  # noqa: F401
    Bundle,
    config_keys,
    diversity,
    frechet_distance,
    generate,
    load_bundle,
    load_image,
    make_bundle,
    meld,
    morph,
    psnr,
    reconstruct,
    sample,
    save_bundle,
    serve_request,
    sifid,
    spearman,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
