"""Side-by-side pair composition with fixed gap, border and resolution caps."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError


class ComposeError(ValueError):
    """Raised for impossible geometry or undecodable inputs."""


@dataclass(frozen=True)
class ComposeConfig:
    """Geometry of the composite: outer border, inter-image gap, size caps."""

    gap_px: int = 500
    border_px: int = 80
    max_width_px: int = 3060
    max_height_px: int = 1440
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self) -> None:
        if self.gap_px < 0 or self.border_px < 0:
            raise ComposeError("gap_px and border_px must be non-negative")
        if self.available_width < 2 or self.available_height < 1:
            raise ComposeError(
                f"caps {self.max_width_px}x{self.max_height_px} leave no room for "
                f"content next to border {self.border_px} and gap {self.gap_px}"
            )

    @property
    def available_width(self) -> int:
        return self.max_width_px - 2 * self.border_px - self.gap_px

    @property
    def available_height(self) -> int:
        return self.max_height_px - 2 * self.border_px


@dataclass(frozen=True)
class LayoutPlan:
    """Resolved pixel geometry for one composite."""

    scaled_a: tuple[int, int]
    scaled_b: tuple[int, int]
    canvas: tuple[int, int]
    origin_a: tuple[int, int]
    origin_b: tuple[int, int]
    scale_factor: float


def plan_layout(
    dims_a: tuple[int, int],
    dims_b: tuple[int, int],
    cfg: ComposeConfig = ComposeConfig(),
) -> LayoutPlan:
    """Plan the composite layout for two images of the given pixel sizes.

    One shared scale factor s <= 1 is applied to both images (each keeps its
    own aspect ratio), chosen as large as possible while the bordered,
    gapped canvas stays within the configured caps.  Images are vertically
    centered on the content band.
    """
    (wa, ha), (wb, hb) = dims_a, dims_b
    if min(wa, ha, wb, hb) <= 0:
        raise ComposeError(f"image dimensions must be positive: {dims_a}, {dims_b}")

    s = min(1.0, cfg.available_width / (wa + wb), cfg.available_height / max(ha, hb))

    def scale(w: int, h: int) -> tuple[int, int]:
        return max(1, int(w * s)), max(1, int(h * s))

    scaled_a = scale(wa, ha)
    scaled_b = scale(wb, hb)
    band = max(scaled_a[1], scaled_b[1])
    canvas = (
        2 * cfg.border_px + scaled_a[0] + cfg.gap_px + scaled_b[0],
        2 * cfg.border_px + band,
    )
    origin_a = (cfg.border_px, cfg.border_px + (band - scaled_a[1]) // 2)
    origin_b = (
        cfg.border_px + scaled_a[0] + cfg.gap_px,
        cfg.border_px + (band - scaled_b[1]) // 2,
    )
    return LayoutPlan(
        scaled_a=scaled_a,
        scaled_b=scaled_b,
        canvas=canvas,
        origin_a=origin_a,
        origin_b=origin_b,
        scale_factor=s,
    )


def _open_image(source) -> Image.Image:
    if isinstance(source, Image.Image):
        img = source
    else:
        try:
            if isinstance(source, bytes):
                img = Image.open(io.BytesIO(source))
            else:
                img = Image.open(source)
            img.load()
        except (UnidentifiedImageError, OSError) as exc:
            raise ComposeError(f"cannot decode image {source!r}: {exc}") from exc
    if img.width <= 0 or img.height <= 0:
        raise ComposeError("zero-area image")
    return img.convert("RGB")


def compose(image_a, image_b, cfg: ComposeConfig = ComposeConfig()) -> Image.Image:
    """Render the side-by-side composite of two images.

    Accepts PIL images, paths, bytes or file objects.  Output dimensions
    equal the :func:`plan_layout` canvas exactly; resampling is bilinear and
    the result is deterministic for fixed inputs.
    """
    a = _open_image(image_a)
    b = _open_image(image_b)
    plan = plan_layout((a.width, a.height), (b.width, b.height), cfg)
    if (a.width, a.height) != plan.scaled_a:
        a = a.resize(plan.scaled_a, Image.BILINEAR)
    if (b.width, b.height) != plan.scaled_b:
        b = b.resize(plan.scaled_b, Image.BILINEAR)
    canvas = Image.new("RGB", plan.canvas, cfg.background)
    canvas.paste(a, plan.origin_a)
    canvas.paste(b, plan.origin_b)
    return canvas


def compose_to_png_bytes(image_a, image_b, cfg: ComposeConfig = ComposeConfig()) -> bytes:
    """Compose and encode as PNG, for handing to a remote judge."""
    buf = io.BytesIO()
    compose(image_a, image_b, cfg).save(buf, format="PNG")
    return buf.getvalue()


def compose_files(
    left: str | Path,
    right: str | Path,
    out: str | Path,
    cfg: ComposeConfig = ComposeConfig(),
) -> LayoutPlan:
    """Compose two image files and write the result; returns the plan used."""
    a = _open_image(left)
    b = _open_image(right)
    plan = plan_layout((a.width, a.height), (b.width, b.height), cfg)
    compose(a, b, cfg).save(out)
    return plan
