"""Static HTML contact sheet for a layout."""

from __future__ import annotations

import base64
import colorsys
import html
import logging
import mimetypes
from pathlib import Path

from .layout import LayoutResult

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".gif", ".webp")
NEUTRAL = "#c8c8c8"

_STYLE = """
body { font-family: sans-serif; margin: 24px; }
.grid { display: grid; gap: 4px; }
.cell, .empty { width: 120px; height: 120px; position: relative; box-sizing: border-box; }
.cell img { width: 100%; height: 100%; object-fit: cover; display: block; }
.cell.ad { outline: 3px solid #d33; }
.cell .label { position: absolute; bottom: 2px; left: 4px; font-size: 10px; color: #222; }
.sponsored { position: absolute; top: 2px; left: 2px; padding: 1px 4px; font-size: 11px;
             font-weight: bold; background: #fff; color: #d33; }
.placeholder { width: 100%; height: 100%; background: repeating-linear-gradient(45deg, #eee, #eee 6px, #ddd 6px, #ddd 12px); }
.rejected { color: #a00; }
"""


def cluster_color(label: int) -> str:
    """Well-spread hues via the golden-angle sequence."""
    hue = (label * 0.618033988749895) % 1.0
    r, g, b = colorsys.hls_to_rgb(hue, 0.72, 0.55)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def _find_image(image_dir: Path, id: str) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        p = image_dir / f"{id}{ext}"
        if p.is_file():
            return p
    return None


def _data_uri(path: Path) -> str:
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode('ascii')}"


def render_html(layout: LayoutResult, image_dir: str | Path | None = None, title: str = "") -> str:
    """Self-contained HTML page; the ad cell carries a visible "Sponsored" tag.

    Without ``image_dir`` each cell is a colour swatch keyed by its cluster
    label (neutral grey when the layout has no clusters). Images that cannot
    be found render as a hatched placeholder and log a warning.
    """
    esc = html.escape
    title = title or f"Layout ({layout.strategy})"
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8">',
        f"<title>{esc(title)}</title><style>{_STYLE}</style></head><body>",
        f"<h1>{esc(title)}</h1>",
    ]
    if layout.rejected or layout.grid is None:
        parts.append(f'<p class="rejected">Ad rejected: {esc(layout.reason or "unspecified")}</p>')
        parts.append("</body></html>")
        return "\n".join(parts) + "\n"

    grid = layout.grid
    labels = layout.clusters.labels if layout.clusters else {}
    ads = set(grid.ad_ids)
    img_root = Path(image_dir) if image_dir is not None else None
    parts.append(f'<div class="grid" style="grid-template-columns: repeat({grid.cols}, 120px)">')
    for r in range(grid.rows):
        for c in range(grid.cols):
            cid = grid.cells.get((r, c))
            if cid is None:
                parts.append(f'<div class="empty" data-row="{r}" data-col="{c}"></div>')
                continue
            label = labels.get(cid)
            color = cluster_color(label) if label is not None else NEUTRAL
            attrs = f'data-row="{r}" data-col="{c}" data-id="{esc(cid)}"'
            if label is not None:
                attrs += f' data-cluster="{label}"'
            cls = "cell ad" if cid in ads else "cell"
            if img_root is None:
                body = f'<span class="label">{esc(cid)}</span>'
                parts.append(f'<div class="{cls}" {attrs} style="background:{color}">')
            else:
                path = _find_image(img_root, cid)
                if path is None:
                    log.warning("no image file for %r under %s", cid, img_root)
                    body = f'<div class="placeholder" title="missing image"></div><span class="label">{esc(cid)}</span>'
                else:
                    body = f'<img alt="{esc(cid)}" src="{_data_uri(path)}">'
                parts.append(f'<div class="{cls}" {attrs}>')
            parts.append(body)
            if cid in ads:
                parts.append('<span class="sponsored">Sponsored</span>')
            parts.append("</div>")
    parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"
