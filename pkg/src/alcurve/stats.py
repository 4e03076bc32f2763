"""Paired comparison of final performance across strategies."""

import numpy as np
from scipy import stats


def paired_pvalues(a, b):
    """One-sided (a > b, a < b) and two-sided paired t-test p-values.

    Identical samples give p = 1 everywhere: there is no evidence of a
    difference, and the t statistic is undefined.
    """
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if diff.size < 2 or np.all(diff == diff[0]):
        if diff.size and diff[0] != 0:
            # constant non-zero shift: every pair agrees on the sign
            greater = 0.0 if diff[0] > 0 else 1.0
            return greater, 1.0 - greater, 0.0
        return 1.0, 1.0, 1.0
    return (float(stats.ttest_rel(a, b, alternative="greater").pvalue),
            float(stats.ttest_rel(a, b, alternative="less").pvalue),
            float(stats.ttest_rel(a, b).pvalue))


def summarize(names, seeds, finals):
    """``finals[i][j]``: final perf of strategy ``names[i]`` on ``seeds[j]``."""
    finals = [np.asarray(f, dtype=np.float64) for f in finals]
    out = {"seeds": list(seeds), "strategies": [], "pairs": []}
    for name, f in zip(names, finals):
        out["strategies"].append({
            "name": name, "n": int(f.size), "mean": float(f.mean()),
            "std": float(f.std(ddof=1)) if f.size > 1 else 0.0,
            "final": [float(x) for x in f],
        })
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            pg, pl, p2 = paired_pvalues(finals[i], finals[j])
            out["pairs"].append({
                "a": names[i], "b": names[j],
                "mean_diff": float(np.mean(finals[i] - finals[j])),
                "p_greater": pg, "p_less": pl, "p_two_sided": p2,
            })
    return out
