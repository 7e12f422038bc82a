"""Paired low/normal-light data in the ``root/low``, ``root/high`` layout."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import torch
from PIL import Image

from .errors import DatasetError, ParameterError, UnpairedImageError

IMAGE_SUFFIXES = (".png",)


def load_image(path):
    """8-bit image file to an H x W x 3 float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def save_image(path, img):
    """Write an H x W x C array in [0, 1] as 8-bit PNG (C of 1 becomes grayscale)."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def to_tensor(img):
    """H x W x 3 array to a 1 x 3 x H x W float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]


def to_image(t):
    """First element of a B x C x H x W tensor as an H x W x C array."""
    return t[0].detach().cpu().permute(1, 2, 0).numpy()


def list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class PairedDataset:
    root: Path
    pairs: List[Tuple[Path, Path]]
    low: List[np.ndarray] = field(default_factory=list, repr=False)
    high: List[np.ndarray] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.low[i], self.high[i]

    def sample_batch(self, batch_size, patch_size, generator, flip=True):
        """Random aligned crops (and horizontal flips) as B x 3 x P x P tensors.

        All randomness comes from ``generator``.
        """
        ys, xs = [], []
        idx = torch.randint(len(self), (batch_size,), generator=generator).tolist()
        for i in idx:
            lo, hi = self.low[i], self.high[i]
            H, W = lo.shape[:2]
            if patch_size > H or patch_size > W:
                raise ParameterError(f"patch {patch_size} larger than image {H}x{W} ({self.pairs[i][0]})")
            top = int(torch.randint(H - patch_size + 1, (1,), generator=generator))
            left = int(torch.randint(W - patch_size + 1, (1,), generator=generator))
            do_flip = flip and bool(torch.randint(2, (1,), generator=generator))
            lo = lo[top:top + patch_size, left:left + patch_size]
            hi = hi[top:top + patch_size, left:left + patch_size]
            if do_flip:
                lo, hi = lo[:, ::-1], hi[:, ::-1]
            ys.append(to_tensor(lo))
            xs.append(to_tensor(hi))
        return torch.cat(ys), torch.cat(xs)


def load_pairs(root):
    root = Path(root)
    low_dir, high_dir = root / "low", root / "high"
    for d in (low_dir, high_dir):
        if not d.is_dir():
            raise DatasetError(f"missing directory {d}")
    lows = list_images(low_dir)
    highs = {p.name: p for p in list_images(high_dir)}
    if not lows:
        raise DatasetError(f"no images in {low_dir}")
    pairs = []
    for lo in lows:
        hi = highs.pop(lo.name, None)
        if hi is None:
            raise UnpairedImageError(lo)
        pairs.append((lo, hi))
    if highs:
        raise UnpairedImageError(next(iter(sorted(highs.values()))), missing="low")
    ds = PairedDataset(root, pairs)
    for lo_path, hi_path in pairs:
        lo, hi = load_image(lo_path), load_image(hi_path)
        if lo.shape != hi.shape:
            raise DatasetError(f"{lo_path} is {lo.shape[:2]} but {hi_path} is {hi.shape[:2]}")
        ds.low.append(lo)
        ds.high.append(hi)
    return ds
