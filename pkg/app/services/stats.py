"""
Statistics Service - assumption checks, repeated-measures tests and multiple-comparison control
"""
import itertools
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
from scipy import stats as sps
from scipy.linalg import null_space
from statsmodels.stats.multitest import multipletests

from app.errors import StatsInputError
from app.models.analysis import TrialMetrics
from app.models.stats import AnalysisPlan, RepeatedMeasures, TestResult
from config.config import StatsConfig

logger = structlog.get_logger(__name__)

SHAPIRO_MIN_N = 3
SHAPIRO_MAX_N = 50
WILCOXON_MIN_N = 5


def _clip_p(p: float) -> float:
    return float(min(1.0, max(0.0, p)))


def shapiro_wilk(sample: Sequence[float]) -> TestResult:
    """Shapiro-Wilk normality test for 3 <= n <= 50"""
    x = np.asarray(sample, dtype=np.float64)
    if not SHAPIRO_MIN_N <= x.size <= SHAPIRO_MAX_N:
        raise StatsInputError("Shapiro-Wilk needs between 3 and 50 observations", n=int(x.size))
    if np.ptp(x) == 0:
        raise StatsInputError("Shapiro-Wilk is undefined for a constant sample")
    w, p = sps.shapiro(x)
    return TestResult("shapiro_wilk", float(w), None, _clip_p(p))


def _orthonormal_contrasts(levels: int) -> np.ndarray:
    return null_space(np.ones((1, levels)))


def mauchly(rm: RepeatedMeasures, factor: Union[int, str] = 0) -> TestResult:
    """
    Mauchly's sphericity test for one factor (or "interaction" in a two-factor design)

    A two-level effect is spherical by construction and returns p = 1.
    """
    cube = rm.cube
    if factor == "interaction":
        if len(rm.factors) != 2:
            raise StatsInputError("interaction sphericity needs two factors")
        contrasts = np.kron(_orthonormal_contrasts(rm.shape[0]), _orthonormal_contrasts(rm.shape[1]))
        scores = rm.data @ contrasts
        label = "interaction"
    else:
        index = rm.factor_index(factor)
        label = rm.factors[index][0]
        collapsed = cube if cube.ndim == 2 else cube.mean(axis=2 - index)
        if collapsed.shape[1] < 3:
            return TestResult("mauchly", 1.0, 0.0, 1.0, label=label,
                              note="sphericity holds trivially for two levels")
        scores = collapsed @ _orthonormal_contrasts(collapsed.shape[1])

    p_dim = scores.shape[1]
    if p_dim < 2:
        return TestResult("mauchly", 1.0, 0.0, 1.0, label=label, note="sphericity holds trivially for two levels")
    n = rm.n_subjects
    covariance = np.cov(scores, rowvar=False, ddof=1)
    trace = np.trace(covariance)
    if trace <= 0:
        raise StatsInputError("Mauchly's test is undefined for zero-variance contrasts", factor=label)
    w = float(np.linalg.det(covariance) / (trace / p_dim) ** p_dim)
    df = p_dim * (p_dim + 1) / 2.0 - 1.0
    if w <= 0:
        return TestResult("mauchly", 0.0, df, 0.0, label=label, note="singular contrast covariance")
    correction = 1.0 - (2.0 * p_dim ** 2 + p_dim + 2.0) / (6.0 * p_dim * (n - 1))
    chi2 = -(n - 1) * correction * np.log(w)
    return TestResult("mauchly", w, df, _clip_p(sps.chi2.sf(chi2, df)), label=label)


def _f_result(
    name: str, ss_effect: float, df_effect: float, ss_error: float, df_error: float, ss_total: float
) -> TestResult:
    # degeneracy thresholds are relative to the total sum of squares
    scale = abs(ss_total)
    if scale == 0.0:
        return TestResult("rm_anova", 0.0, (df_effect, df_error), 1.0, label=name, note="no variation")
    if ss_effect <= 1e-12 * scale:
        return TestResult("rm_anova", 0.0, (df_effect, df_error), 1.0, label=name)
    if ss_error <= 1e-12 * scale:
        return TestResult("rm_anova", float("inf"), (df_effect, df_error), 0.0, label=name,
                          note="zero error variance")
    f = (ss_effect / df_effect) / (ss_error / df_error)
    return TestResult("rm_anova", float(f), (df_effect, df_error), _clip_p(sps.f.sf(f, df_effect, df_error)),
                      label=name)


def rm_anova(rm: RepeatedMeasures) -> Dict[str, TestResult]:
    """
    Repeated-measures ANOVA by sums of squares

    Returns:
        TestResult per effect: each factor name, plus "interaction" for two factors
    """
    cube = rm.cube
    n = rm.n_subjects
    grand = cube.mean()
    if cube.ndim == 2:
        k = cube.shape[1]
        subject_means = cube.mean(axis=1)
        level_means = cube.mean(axis=0)
        ss_total = np.sum((cube - grand) ** 2)
        ss_subjects = k * np.sum((subject_means - grand) ** 2)
        ss_effect = n * np.sum((level_means - grand) ** 2)
        ss_error = max(0.0, ss_total - ss_subjects - ss_effect)
        name = rm.factors[0][0]
        return {name: _f_result(name, ss_effect, k - 1, ss_error, (k - 1) * (n - 1), ss_total)}

    a, b = cube.shape[1], cube.shape[2]
    m_s = cube.mean(axis=(1, 2))
    m_a = cube.mean(axis=(0, 2))
    m_b = cube.mean(axis=(0, 1))
    m_ab = cube.mean(axis=0)
    m_sa = cube.mean(axis=2)
    m_sb = cube.mean(axis=1)

    ss_a = n * b * np.sum((m_a - grand) ** 2)
    ss_as = b * np.sum((m_sa - m_s[:, None] - m_a[None, :] + grand) ** 2)
    ss_b = n * a * np.sum((m_b - grand) ** 2)
    ss_bs = a * np.sum((m_sb - m_s[:, None] - m_b[None, :] + grand) ** 2)
    ss_ab = n * np.sum((m_ab - m_a[:, None] - m_b[None, :] + grand) ** 2)
    residual = (cube - m_sa[:, :, None] - m_sb[:, None, :] - m_ab[None, :, :]
                + m_s[:, None, None] + m_a[None, :, None] + m_b[None, None, :] - grand)
    ss_abs = np.sum(residual ** 2)
    ss_total = np.sum((cube - grand) ** 2)

    name_a, name_b = rm.factors[0][0], rm.factors[1][0]
    return {
        name_a: _f_result(name_a, ss_a, a - 1, ss_as, (a - 1) * (n - 1), ss_total),
        name_b: _f_result(name_b, ss_b, b - 1, ss_bs, (b - 1) * (n - 1), ss_total),
        "interaction": _f_result(
            "interaction", ss_ab, (a - 1) * (b - 1), ss_abs, (a - 1) * (b - 1) * (n - 1), ss_total
        ),
    }


def friedman(rm: RepeatedMeasures) -> TestResult:
    """Friedman chi-square over all cells, midranks with tie correction"""
    data = rm.data
    n, k = data.shape
    if k < 3:
        raise StatsInputError("Friedman needs at least three conditions", conditions=k)
    ranks = np.apply_along_axis(sps.rankdata, 1, data)
    rank_sums = ranks.sum(axis=0)
    statistic = 12.0 / (n * k * (k + 1)) * np.sum(rank_sums ** 2) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in data:
        _, counts = np.unique(row, return_counts=True)
        ties += np.sum(counts ** 3 - counts)
    denominator = 1.0 - ties / (n * k * (k ** 2 - 1))
    if denominator <= 1e-12:
        return TestResult("friedman", 0.0, float(k - 1), 1.0, note="all observations tied within subjects")
    statistic = max(0.0, statistic / denominator)
    return TestResult("friedman", float(statistic), float(k - 1), _clip_p(sps.chi2.sf(statistic, k - 1)))


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float],
    exact_max_n: int = 12,
    continuity_correction: bool = True,
    two_sided: bool = True,
) -> TestResult:
    """
    Wilcoxon signed-rank test on paired samples

    Zero differences are dropped and ties get midranks. The statistic is the
    positive rank sum. For n <= exact_max_n the p-value comes from all 2^n
    sign assignments; otherwise from the tie-corrected normal approximation.
    One-sided tests use the alternative x > y.
    """
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise StatsInputError("all paired differences are zero")
    if n < WILCOXON_MIN_N:
        raise StatsInputError("Wilcoxon needs at least five non-zero differences", n=int(n))
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mean = n * (n + 1) / 4.0

    if n <= exact_max_n:
        signs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.float64)
        sums = signs @ ranks
        tol = 1e-9
        if two_sided:
            p = np.mean(np.abs(sums - mean) >= abs(w_plus - mean) - tol)
        else:
            p = np.mean(sums >= w_plus - tol)
        return TestResult("wilcoxon", w_plus, None, _clip_p(p), note="exact")

    _, counts = np.unique(np.abs(d), return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    deviation = w_plus - mean
    correction = 0.5 if continuity_correction else 0.0
    if two_sided:
        z = max(0.0, abs(deviation) - correction) / np.sqrt(variance)
        p = 2.0 * sps.norm.sf(z)
    else:
        z = (deviation - correction) / np.sqrt(variance)
        p = sps.norm.sf(z)
    return TestResult("wilcoxon", w_plus, None, _clip_p(p), note="normal approximation")


def paired_t(x: Sequence[float], y: Sequence[float], two_sided: bool = True) -> TestResult:
    """Paired t-test; a constant non-zero difference reports an infinite t with p = 0"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise StatsInputError("paired t needs two equal-length samples of at least two pairs")
    d = x - y
    df = float(d.size - 1)
    if np.ptp(d) == 0:
        if d[0] == 0:
            raise StatsInputError("paired differences have zero variance")
        return TestResult("paired_t", float(np.sign(d[0]) * np.inf), df, 0.0,
                          note="constant difference, t is unbounded")
    result = sps.ttest_rel(x, y, alternative="two-sided" if two_sided else "greater")
    return TestResult("paired_t", float(result.statistic), df, _clip_p(result.pvalue))


def holm_bonferroni(pvals: Sequence[float]) -> np.ndarray:
    """Holm step-down adjusted p-values, in the input order"""
    p = np.asarray(pvals, dtype=np.float64)
    if p.size == 0:
        return p
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise StatsInputError("p-values must lie in [0, 1]")
    return multipletests(p, method="holm")[1]


def _pairwise(rm: RepeatedMeasures):
    """Pairs of columns compared after the omnibus test"""
    if len(rm.factors) == 1:
        levels = rm.factors[0][1]
        for i, j in itertools.combinations(range(len(levels)), 2):
            yield f"{levels[i]} vs {levels[j]}", rm.data[:, i], rm.data[:, j]
        return
    cube = rm.cube
    first, second = rm.factors[0][1], rm.factors[1][1]
    for s, level in enumerate(second):
        for i, j in itertools.combinations(range(len(first)), 2):
            yield f"{first[i]} vs {first[j]} @ {level}", cube[:, i, s], cube[:, j, s]


def select_tests(rm: RepeatedMeasures, config: Optional[StatsConfig] = None) -> AnalysisPlan:
    """
    Choose and run the parametric or non-parametric branch

    Normality per cell and sphericity per effect decide the branch; post-hoc
    comparisons are Holm-adjusted as one family.
    """
    config = config or StatsConfig()
    normality, notes = [], []
    normal = True
    for label, column in zip(rm.cell_labels(), rm.data.T):
        try:
            result = shapiro_wilk(column)
            result.label = label
            normality.append(result)
            normal &= result.p > config.alpha
        except StatsInputError as e:
            notes.append(f"normality not testable for {label}: {e.message}")
            normal = False

    sphericity = []
    spherical = True
    effects: List[Union[int, str]] = list(range(len(rm.factors)))
    if len(rm.factors) == 2:
        effects.append("interaction")
    for effect in effects:
        try:
            result = mauchly(rm, effect)
            sphericity.append(result)
            spherical &= result.p > config.alpha
        except StatsInputError as e:
            notes.append(f"sphericity not testable: {e.message}")
            spherical = False

    plan = AnalysisPlan(parametric=bool(normal and spherical), normality=normality, sphericity=sphericity,
                        notes=notes, alpha=config.alpha)
    if plan.parametric:
        plan.omnibus = list(rm_anova(rm).values())
    elif rm.data.shape[1] >= 3:
        plan.omnibus = [friedman(rm)]
    else:
        notes.append("Friedman needs three cells; the pairwise test is the omnibus")

    for label, x, y in _pairwise(rm):
        try:
            if plan.parametric:
                result = paired_t(x, y, config.two_sided)
            else:
                result = wilcoxon_signed_rank(x, y, config.wilcoxon_exact_max_n,
                                              config.continuity_correction, config.two_sided)
        except StatsInputError as e:
            notes.append(f"{label} skipped: {e.message}")
            continue
        result.label = label
        plan.post_hoc.append(result)

    adjusted = holm_bonferroni([r.p for r in plan.post_hoc])
    for result, p in zip(plan.post_hoc, adjusted):
        result.p_adjusted = float(p)
    logger.debug("Tests selected", branch=plan.branch, post_hoc=len(plan.post_hoc))
    return plan


def _matrix(subjects: Dict[str, Dict[str, TrialMetrics]], keys: Sequence[str], value) -> np.ndarray:
    return np.array([[value(subjects[s][k]) for k in keys] for s in sorted(subjects)])


def cross_subject_stats(
    subject_metrics: Dict[str, Sequence[TrialMetrics]],
    config: Optional[StatsConfig] = None,
) -> Dict[str, Dict]:
    """
    Group statistics over simulated subjects

    Per level: initial force, residual force and final normalized RMS across
    conditions. Across protocols and levels: stimulation amplitudes as a
    two-factor design.
    """
    config = config or StatsConfig()
    if len(subject_metrics) < 2:
        raise StatsInputError("group statistics need at least two subjects", subjects=len(subject_metrics))
    subjects = {s: {m.key: m for m in metrics} for s, metrics in subject_metrics.items()}
    reference = next(iter(subject_metrics.values()))
    conditions = list(dict.fromkeys(m.condition for m in reference))
    levels = list(dict.fromkeys(m.level for m in reference))
    for s, table in subjects.items():
        if set(table) != {m.key for m in reference}:
            raise StatsInputError("subjects do not share the same trials", subject=s)

    def level_family(value, needs_emg: bool = False) -> Dict[str, Dict]:
        out = {}
        for level in levels:
            keys = [f"{c}_{level:.2f}" for c in conditions]
            if needs_emg and any(not subjects[s][k].normalized_rms for s in subjects for k in keys):
                out[f"{level:.2f}"] = {"notes": ["no EMG metrics"]}
                continue
            if len(keys) < 2:
                out[f"{level:.2f}"] = {"notes": ["fewer than two conditions"]}
                continue
            rm = RepeatedMeasures.one_way(_matrix(subjects, keys, value), "condition", conditions)
            out[f"{level:.2f}"] = select_tests(rm, config).to_dict()
        return out

    report = {
        "subjects": sorted(subjects),
        "conditions": conditions,
        "levels": [f"{lv:.2f}" for lv in levels],
        "initial_force": level_family(lambda m: m.initial_force_pct),
        "residual_force": level_family(lambda m: m.residual_pct),
        "final_normalized_rms": level_family(lambda m: m.normalized_rms[-1] if m.normalized_rms else np.nan,
                                             needs_emg=True),
    }

    protocols = [c for c in conditions if c in ("HF", "LF")]
    if len(protocols) == 2 and len(levels) >= 2:
        keys = [f"{p}_{lv:.2f}" for p in protocols for lv in levels]
        rm = RepeatedMeasures(
            _matrix(subjects, keys, lambda m: m.stim_amplitude),
            [("protocol", protocols), ("level", [f"{lv:.2f}" for lv in levels])],
        )
        report["amplitude"] = select_tests(rm, config).to_dict()
        report["amplitude"]["rm_anova"] = {k: r.to_dict(config.alpha) for k, r in rm_anova(rm).items()}
    logger.info("Group statistics computed", subjects=len(subjects), levels=len(levels))
    return report
