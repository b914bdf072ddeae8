import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from cqsearch.plot import plot_step_times  # noqa: E402


def test_plot_step_times():
    profile = pd.DataFrame(
        {
            "n_vars": [1, 1, 2, 2, 3],
            "step_time": [0.001, 0.0012, 0.002, 0.0021, 0.004],
            "normalized": [0.0003, 0.0004, 0.0005, 0.0005, 0.0006],
        }
    )
    fig = plot_step_times(profile)
    axes = fig.get_axes()
    assert len(axes) == 2  # nosec
    assert axes[0].get_title() == "average step time"  # nosec
    assert axes[0].get_xlabel() == "n vars"  # nosec
    plt.close(fig)


def test_plot_requires_columns():
    with pytest.raises(ValueError):
        plot_step_times(pd.DataFrame({"n_vars": [1]}))
