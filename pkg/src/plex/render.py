"""Word-importance heatmaps as self-contained HTML or ANSI terminal text.

Positive scores shade red, negative scores blue; opacity ramps linearly
with |score| so a score of 0 keeps the neutral background.
"""

from __future__ import annotations

import html

import numpy as np

_POS_RGB = (204, 37, 48)
_NEG_RGB = (43, 94, 204)


def _clip(score: float) -> float:
    return float(np.clip(score, -1.0, 1.0))


def _rgba(score: float) -> str:
    score = _clip(score)
    r, g, b = _POS_RGB if score >= 0 else _NEG_RGB
    return f"rgba({r},{g},{b},{abs(score):.3f})"


def _blend(score: float) -> tuple[int, int, int]:
    """Linear blend from white toward the signed base color."""
    score = _clip(score)
    base = _POS_RGB if score >= 0 else _NEG_RGB
    a = abs(score)
    return tuple(round(255 * (1 - a) + c * a) for c in base)


def _legend_html() -> str:
    cells = []
    for i in range(21):
        score = -1.0 + i / 10.0
        cells.append(
            f'<span style="display:inline-block;width:12px;height:14px;'
            f'background-color:{_rgba(score)};"></span>'
        )
    return (
        '<div style="margin-bottom:12px;font-size:12px;color:#444;">'
        "<span>-1&nbsp;</span>" + "".join(cells) + "<span>&nbsp;+1</span>"
        "<span style=\"margin-left:12px;\">red = pushes toward the predicted class, "
        "blue = pushes away</span></div>"
    )


def sentence_html(words: list[str], scores, caption: str = "") -> str:
    """One highlighted sentence as an HTML fragment."""
    if len(words) != len(scores):
        raise ValueError(f"{len(words)} words but {len(scores)} scores")
    spans = []
    for word, score in zip(words, scores):
        spans.append(
            f'<span style="background-color:{_rgba(float(score))};padding:1px 3px;'
            f'border-radius:3px;" title="{float(score):+.3f}">{html.escape(word)}</span>'
        )
    cap = f'<div style="font-size:12px;color:#777;">{html.escape(caption)}</div>' if caption else ""
    return f'{cap}<p style="line-height:2.0;font-size:17px;">{" ".join(spans)}</p>'


def html_heatmap(sentences: list[tuple[list[str], list[float], str]], title: str = "word importance") -> str:
    """Full standalone page (inline styles only, no external fetches)."""
    body = "\n".join(sentence_html(words, scores, caption) for words, scores, caption in sentences)
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n</head>\n"
        '<body style="font-family:sans-serif;max-width:56em;margin:2em auto;">\n'
        f"{_legend_html()}\n{body}\n</body>\n</html>\n"
    )


def ansi_heatmap(words: list[str], scores) -> str:
    """Sentence with 24-bit background colors for terminals."""
    if len(words) != len(scores):
        raise ValueError(f"{len(words)} words but {len(scores)} scores")
    parts = []
    for word, score in zip(words, scores):
        r, g, b = _blend(float(score))
        parts.append(f"\x1b[48;2;{r};{g};{b}m\x1b[30m{word}\x1b[0m")
    return " ".join(parts)
