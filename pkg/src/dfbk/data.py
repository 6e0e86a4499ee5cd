"""Synthetic paired-modality phantoms and paired PNG directory I/O.

A phantom is one shared anatomy (head outline with skull ring, an inner
fluid-filled ellipse, up to two lesions, and a smooth tissue texture)
rendered twice through different per-class intensity maps. Images are
``(1, H, W)`` float32 arrays in ``[0, 1]``; everything outside the head is
exactly zero in both modalities, and everything inside is at least 0.1.
"""

import logging
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import IngestionError, ShapeError, ValidationError
from .knowledge import default_prompt

log = logging.getLogger(__name__)

BACKGROUND_LEVEL = 0.05

# (source name, target name, source intensities, target intensities, texture gains)
MODALITY_PAIRS = {
    "t1_t2": (
        "T1",
        "T2",
        {"tissue": 0.70, "fluid": 0.15, "lesion": 0.35, "skull": 0.25},
        {"tissue": 0.40, "fluid": 0.90, "lesion": 0.80, "skull": 0.20},
        (0.06, -0.06),
    ),
    "flair_dwi": (
        "FLAIR",
        "DWI",
        {"tissue": 0.55, "fluid": 0.12, "lesion": 0.90, "skull": 0.25},
        {"tissue": 0.30, "fluid": 0.15, "lesion": 0.95, "skull": 0.12},
        (0.05, 0.03),
    ),
    "ct_mr": (
        "CT",
        "MR",
        {"tissue": 0.35, "fluid": 0.33, "lesion": 0.38, "skull": 0.95},
        {"tissue": 0.65, "fluid": 0.15, "lesion": 0.40, "skull": 0.20},
        (0.005, 0.06),
    ),
}


@dataclass
class DatasetSpec:
    n_train: int = 160
    n_val: int = 40
    image_size: int = 32
    seed: int = 0
    modality_pair: str = "t1_t2"

    def __post_init__(self):
        if self.modality_pair not in MODALITY_PAIRS:
            raise ValidationError(
                f"modality_pair must be one of {sorted(MODALITY_PAIRS)}, got {self.modality_pair!r}"
            )
        if self.image_size < 4 or self.image_size % 2:
            raise ValidationError(f"image_size must be even and >= 4, got {self.image_size}")
        if self.n_train < 1 or self.n_val < 0:
            raise ValidationError("need n_train >= 1 and n_val >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class PairedSample:
    x0: np.ndarray  # target modality
    y0: np.ndarray  # source modality
    anatomy_mask: np.ndarray
    prompt: str
    id: str


def subject_of(sample_id):
    """Subject key used for disjoint splits: the id up to its last ``_``."""
    return sample_id.rsplit("_", 1)[0] if "_" in sample_id else sample_id


def _ellipse_radius(xx, yy, cx, cy, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return np.sqrt((u / a) ** 2 + (v / b) ** 2)


def _soft_inside(r, edge):
    return 1.0 / (1.0 + np.exp((r - 1.0) / edge))


def _smooth_field(rng, xx, yy, n_waves=3):
    field = np.zeros_like(xx)
    for _ in range(n_waves):
        kx, ky = rng.uniform(-3.0, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.cos(np.pi * (kx * xx + ky * yy) + phase)
    return field / n_waves


def _bias_field(rng, xx, yy, strength=0.08):
    cx, cy, cxy = rng.uniform(-1.0, 1.0, size=3)
    field = cx * xx + cy * yy + 0.5 * cxy * xx * yy
    return 1.0 + strength * field / 2.0


def _render(layers, intensities, texture, texture_gain, bias, head):
    image = np.full(head.shape, intensities["tissue"]) + texture_gain * texture
    for name, alpha in layers:
        image = (1.0 - alpha) * image + alpha * intensities[name]
    image = image * bias * head
    return np.clip(image, 0.0, 1.0)


def generate_phantom_pair(seed, spec=None, sample_id=None):
    """Render one anatomy in the spec's source and target modalities."""
    spec = spec if spec is not None else DatasetSpec()
    src_name, tgt_name, src_map, tgt_map, (src_tex, tgt_tex) = MODALITY_PAIRS[spec.modality_pair]
    rng = np.random.default_rng(seed)
    n = spec.image_size
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    xx, yy = np.meshgrid(coords, coords)

    cx, cy = rng.uniform(-0.05, 0.05, size=2)
    a, b = rng.uniform(0.72, 0.88), rng.uniform(0.62, 0.80)
    theta = rng.uniform(-0.3, 0.3)
    r_head = _ellipse_radius(xx, yy, cx, cy, a, b, theta)
    head = (r_head < 1.0).astype(np.float64)

    thickness = rng.uniform(0.12, 0.2)
    skull = 1.0 / (1.0 + np.exp(((1.0 - thickness) - r_head) / 0.03))
    fx, fy = cx + rng.uniform(-0.1, 0.1), cy + rng.uniform(-0.1, 0.1)
    fluid = _soft_inside(
        _ellipse_radius(xx, yy, fx, fy, rng.uniform(0.12, 0.3), rng.uniform(0.1, 0.25),
                        rng.uniform(0, np.pi)),
        0.05,
    )
    layers = [("fluid", fluid)]
    for _ in range(rng.integers(0, 3)):
        ang, dist = rng.uniform(0, 2 * np.pi), rng.uniform(0.2, 0.5)
        lx, ly = cx + dist * a * np.cos(ang), cy + dist * b * np.sin(ang)
        lesion = _soft_inside(
            _ellipse_radius(xx, yy, lx, ly, rng.uniform(0.08, 0.18), rng.uniform(0.08, 0.18),
                            rng.uniform(0, np.pi)),
            0.08,
        )
        layers.append(("lesion", lesion))
    layers.append(("skull", skull))

    texture = _smooth_field(rng, xx, yy)
    src_bias = _bias_field(rng, xx, yy)
    tgt_bias = _bias_field(rng, xx, yy)
    y0 = _render(layers, src_map, texture, src_tex, src_bias, head)
    x0 = _render(layers, tgt_map, texture, tgt_tex, tgt_bias, head)
    return PairedSample(
        x0=x0[None].astype(np.float32),
        y0=y0[None].astype(np.float32),
        anatomy_mask=head[None].astype(np.float32),
        prompt=default_prompt(src_name, tgt_name),
        id=sample_id if sample_id is not None else f"ph{seed}",
    )


def sample_seed(dataset_seed, index):
    return int(np.random.SeedSequence([dataset_seed, index]).generate_state(1)[0])


def generate_dataset(spec):
    """All ``n_train + n_val`` phantoms; a pure function of ``spec``."""
    total = spec.n_train + spec.n_val
    return [
        generate_phantom_pair(sample_seed(spec.seed, i), spec, sample_id=f"ph{i:05d}")
        for i in range(total)
    ]


def split(dataset, seed, fraction):
    """Seeded subject-disjoint split into ``(train, val)``.

    ``round(fraction * n_subjects)`` subjects go to train.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"fraction must be in [0, 1], got {fraction}")
    subjects = sorted({subject_of(s.id) for s in dataset})
    random.Random(seed).shuffle(subjects)
    n_train = int(round(fraction * len(subjects)))
    train_subjects = set(subjects[:n_train])
    train = [s for s in dataset if subject_of(s.id) in train_subjects]
    val = [s for s in dataset if subject_of(s.id) not in train_subjects]
    return train, val


def make_splits(spec):
    dataset = generate_dataset(spec)
    return split(dataset, spec.seed, spec.n_train / (spec.n_train + spec.n_val))


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(
        np.uint8
    )


def save_png(path, image):
    """Write a ``(1, H, W)`` or ``(H, W)`` image in [0, 1] as 8-bit grayscale."""
    image = np.squeeze(image, axis=0) if np.ndim(image) == 3 else image
    Image.fromarray(to_uint8(image)).save(path)


def load_png(path):
    with Image.open(path) as im:
        return (np.asarray(im.convert("L"), dtype=np.float32) / 255.0)[None]


def export_paired_dir(samples, path, write_prompts=True):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_png(path / f"{s.id}_src.png", s.y0)
        save_png(path / f"{s.id}_tgt.png", s.x0)
    if write_prompts:
        lines = [f"{s.id}\t{s.prompt}\n" for s in samples]
        (path / "prompts.txt").write_text("".join(lines), encoding="utf-8")
    return path


def _read_prompts(path):
    prompts = {}
    file = Path(path) / "prompts.txt"
    if file.exists():
        for lineno, line in enumerate(file.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise IngestionError(f"{file}:{lineno}: expected 'id<TAB>prompt'")
            sid, prompt = line.split("\t", 1)
            prompts[sid] = prompt
    return prompts


def scan_paired_dir(path, require_target=True):
    """Map id -> (src path, tgt path or None) for ``<id>_src.png``/``<id>_tgt.png``."""
    path = Path(path)
    if not path.is_dir():
        raise IngestionError(f"{path} is not a directory")
    src = {p.name[: -len("_src.png")]: p for p in path.glob("*_src.png")}
    tgt = {p.name[: -len("_tgt.png")]: p for p in path.glob("*_tgt.png")}
    orphans = sorted(f"{i}_src.png" for i in src.keys() - tgt.keys()) if require_target else []
    orphans += sorted(f"{i}_tgt.png" for i in tgt.keys() - src.keys())
    if orphans:
        raise IngestionError(f"unpaired files in {path}: {', '.join(orphans)}")
    if not src:
        raise IngestionError(f"no '<id>_src.png' files found in {path}")
    return {i: (src[i], tgt.get(i)) for i in sorted(src)}


def load_paired_dir(path, prompt=None, require_target=True):
    """Load ``<id>_src.png`` / ``<id>_tgt.png`` pairs and optional prompts.txt.

    Samples without a target (only allowed with ``require_target=False``)
    get ``x0 = None``.
    """
    prompts = _read_prompts(path)
    fallback = prompt if prompt is not None else default_prompt("source", "target")
    samples = []
    for sid, (src_path, tgt_path) in scan_paired_dir(path, require_target).items():
        y0 = load_png(src_path)
        x0 = load_png(tgt_path) if tgt_path is not None else None
        if x0 is not None and x0.shape != y0.shape:
            raise IngestionError(f"size mismatch for pair {sid}: {y0.shape} vs {x0.shape}")
        if y0.shape[-1] % 2 or y0.shape[-2] % 2:
            raise ShapeError(f"{src_path}: image dims {y0.shape[-2:]} must be even")
        mask = (y0 > BACKGROUND_LEVEL).astype(np.float32)
        samples.append(PairedSample(x0, y0, mask, prompts.get(sid, fallback), sid))
    log.info("loaded %d pairs from %s", len(samples), path)
    return samples


def stack_images(samples, attr):
    return np.stack([getattr(s, attr) for s in samples]).astype(np.float32)
