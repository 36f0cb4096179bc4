"""
Report Plots - SVG figures of force profiles, normalized RMS and spatial RMS maps
"""
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import structlog

logger = structlog.get_logger(__name__)

CONDITION_COLORS = {"Vol": "#2ca02c", "HF": "#1f77b4", "LF": "#d62728"}


def force_profile_figure(frame: pd.DataFrame, title: str) -> go.Figure:
    """
    Smoothed force per condition over time

    Args:
        frame: long table with columns condition, time_s, force_pct_mvc
    """
    fig = px.line(
        frame,
        x="time_s",
        y="force_pct_mvc",
        color="condition",
        color_discrete_map=CONDITION_COLORS,
        title=title,
        labels={"time_s": "Time (s)", "force_pct_mvc": "Force (%MVC)", "condition": "Condition"},
    )
    fig.update_layout(template="simple_white")
    return fig


def normalized_rms_figure(frame: pd.DataFrame, title: str) -> go.Figure:
    """Normalized RMS per period; frame is the long normalized RMS table of one level"""
    frame = frame.assign(period_mid_s=0.5 * (frame["start_s"] + frame["end_s"]))
    fig = px.line(
        frame,
        x="period_mid_s",
        y="normalized_rms",
        color="condition",
        markers=True,
        color_discrete_map=CONDITION_COLORS,
        title=title,
        labels={"period_mid_s": "Period centre (s)", "normalized_rms": "Normalized RMS", "condition": "Condition"},
    )
    fig.update_layout(template="simple_white")
    return fig


def rms_map_figure(surface: np.ndarray, title: str) -> go.Figure:
    """Heat map of an interpolated RMS surface, clamped at zero"""
    fig = px.imshow(
        np.clip(surface, 0.0, None),
        color_continuous_scale="Jet",
        origin="upper",
        aspect="equal",
        title=title,
        labels={"color": "RMS (mV)"},
    )
    fig.update_xaxes(showticklabels=False)
    fig.update_yaxes(showticklabels=False)
    return fig


def save_svg(fig: go.Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_image(str(path), format="svg")
    logger.debug("Figure written", path=str(path))
    return path
