"""Plot search step times."""

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

__all__ = ["plot_step_times"]


def plot_step_times(profile, by="n_vars", palette="colorblind", errorbar=("se", 1)):
    """Plot average step time and normalized step time against query size.

    Parameters
    ----------
    profile : pandas.DataFrame
        Output of :func:`cqsearch.evaluate.timing_profile`. Must contain the
        columns ``step_time``, ``normalized`` and ``by``.

    by : str, default="n_vars"
        Column used for the x-axis.

    palette : string, list, dict, or matplotlib.colors.Colormap, default="colorblind"
        Passed to seaborn.color_palette().

    errorbar : tuple, default=("se", 1)
        Error bar specification passed to seaborn.lineplot.

    Returns
    -------
    fig : matplotlib.figure.Figure
        Two panels: the average step time in milliseconds, and the same
        divided by the complexity factor ``n_vars + 2 * n_literals``.
    """
    missing = {"step_time", "normalized", by} - set(profile.columns)
    if missing:
        raise ValueError(
            "profile is missing columns {0}".format(sorted(missing))
        )

    df = pd.DataFrame(
        {
            by: profile[by].astype(int),
            "step time [ms]": 1000.0 * profile["step_time"].astype(np.float64),
            "normalized [ms]": 1000.0 * profile["normalized"].astype(np.float64),
        }
    )

    color = sns.color_palette(palette)[0]
    fig, axes = plt.subplots(nrows=1, ncols=2, figsize=(9, 3.5), sharex=True)
    for ax, column in zip(axes, ["step time [ms]", "normalized [ms]"]):
        _ = sns.lineplot(
            x=by,
            y=column,
            data=df,
            errorbar=errorbar,
            marker="o",
            color=color,
            ax=ax,
            linewidth=1.0,
        )
        _ = ax.set_xlabel(by.replace("_", " "))
        _ = ax.tick_params(axis="both", which="major")

    _ = axes[0].set_title("average step time")
    _ = axes[1].set_title("divided by complexity factor")
    fig.tight_layout()
    return fig
