"""Facial part swapping on procedural faces.

Thin wrapper over the compiled core. Images are float32 [h, w, 3] arrays in
[0, 1], masks are uint8 [h, w] arrays, and face references are
'image.ppm:mask_prefix' strings, matching the command-line tool.
"""

try:
    from ._partswap import *  # noqa: F401,F403
    from ._partswap import __doc__ as _core_doc, __version__  # noqa: F401
except ImportError:
    # In-tree test layout: the extension sits next to the build products
    # rather than inside this package.
    from _partswap import *  # noqa: F401,F403
    from _partswap import __doc__ as _core_doc, __version__  # noqa: F401

__all__ = [
    "default_config",
    "gen_data",
    "train",
    "swap",
    "evaluate",
    "ablate",
    "invert_fix",
    "render_face",
    "encode_latent",
    "decode_latent",
    "part_embed",
    "fpsim",
    "fid",
    "masked_mse",
    "read_image",
    "write_image",
    "read_mask",
    "write_mask",
    "PartswapError",
    "ConfigError",
]
