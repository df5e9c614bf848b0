from .augment import AugmentConfig, augment, blur_postpass
from .imageops import load_png, resize, resize_to_height, save_png
from .io import load_image_folder, read_jsonl, read_labels, write_jsonl, write_labels
from .patches import PatchPair, crop_patch_pair, filter_usable, make_batch, stack_batch
from .render import (
    ALPHABET_94,
    TOY_ALPHABET,
    LabeledSample,
    RenderError,
    RenderSpec,
    content_canvas,
    default_fonts,
    find_fonts,
    render_corpus,
    render_word,
    standard_font,
)
from .sketch import edge_map, hysteresis, sketch_overlay
