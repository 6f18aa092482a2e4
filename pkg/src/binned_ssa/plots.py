from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from loguru import logger  # noqa: E402

from .model import ModelError  # noqa: E402

# fixed ids so the same CSV renders to identical SVG bytes; text stays text
plt.rcParams["svg.hashsalt"] = "binned-ssa"
plt.rcParams["svg.fonttype"] = "none"


def _line_chart(frame: pd.DataFrame, x: str, y: str, series: str, title: str, path: Path) -> bool:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    drawn = 0
    for key, group in frame.groupby(series, sort=True):
        group = group.dropna(subset=[x, y]).sort_values(x)
        if group.empty:
            logger.warning(f"{path.name}: series {series}={key} has no data, skipped")
            continue
        ax.plot(group[x], group[y], marker="o", label=str(key), gid=f"series-{key}")
        drawn += 1
    if drawn == 0:
        plt.close(fig)
        logger.warning(f"{path.name}: nothing to plot")
        return False
    ax.set_xscale("log")
    ax.set_xlabel(x.replace("_", " "))
    ax.set_ylabel(y.replace("_", " "))
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(title=series.replace("_", " "))
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True


def emit_plots(csv_path: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """
    Render the charts of a sweep CSV as SVG files. The kind of sweep is recognized from its columns.

    :param csv_path: CSV written by one of the sweeps
    :param out_dir: Output directory, created if missing
    :return: Paths of the files written
    :raises ModelError: if the CSV is not a sweep result
    """
    csv_path = Path(csv_path)
    try:
        frame = pd.read_csv(csv_path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ModelError(f"cannot read sweep CSV {csv_path}: {e}")
    cols = set(frame.columns)
    if "ns_per_step" not in cols:
        raise ModelError(f"{csv_path} has no ns_per_step column; not a sweep result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = csv_path.stem
    charts = []
    if {"bin_count", "bin_width"} <= cols:
        charts.append(("bin_width", "ns_per_step", "bin_count", "Step cost over bin width and bin count"))
    elif "bin_width" in cols:
        frame["series"] = "nrm-bins"
        charts.append(("bin_width", "ns_per_step", "series", "Step cost over bin width"))
        charts.append(("bin_width", "search_depth", "series", "Search depth over bin width"))
    elif {"subvolume", "method"} <= cols:
        charts.append(("channels", "ns_per_step", "method", "Step cost on the spatial switch"))
    elif {"channels", "method"} <= cols:
        charts.append(("channels", "ns_per_step", "method", "Step cost over channel count"))
        charts.append(("channels", "search_depth", "method", "Search depth over channel count"))
    else:
        raise ModelError(f"{csv_path} does not match any known sweep layout")
    written = []
    for x, y, series, title in charts:
        if y not in cols:
            logger.warning(f"{csv_path} has no {y} column, skipped")
            continue
        path = out_dir / f"{stem}_{y}.svg"
        if _line_chart(frame, x, y, series, title, path):
            written.append(path)
            logger.info(f"wrote {path}")
    return written
