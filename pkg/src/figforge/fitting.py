"""Maximum-likelihood fitting of grammar and response parameters.

Classification data are per-item yes-counts scored with binomial
likelihoods; generation data are per-response tokens scored with the
posterior predictive.  The optimizer is constrained (simplex equality on
the SET branch probabilities, boxes elsewhere) with multi-start; a
softmax/logit/log reparameterized path exists for cross-checking.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize as sopt
from scipy.special import gammaln

from .inference import (
    FitParams,
    InferenceError,
    NoViableHypothesisError,
    Posterior,
    TrialView,
    classify,
    posterior,
    predictive_logprob,
)


class ConstraintViolationError(InferenceError):
    pass


class NonConvergenceError(InferenceError):
    pass


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class ClassificationTrial:
    trial_id: str
    items: tuple[int, ...]  # token ids in the trial universe
    k: tuple[int, ...]      # yes counts
    n: tuple[int, ...]      # response counts

    def __post_init__(self):
        if not (len(self.items) == len(self.k) == len(self.n)):
            raise ConstraintViolationError("items/k/n length mismatch")
        for kk, nn in zip(self.k, self.n):
            if not 0 <= kk <= nn:
                raise ConstraintViolationError(f"k={kk} outside 0..n={nn}")


@dataclass(frozen=True)
class ClassificationDataset:
    trials: tuple[ClassificationTrial, ...]


@dataclass(frozen=True)
class GenerationTrial:
    trial_id: str
    tokens: tuple[int, ...]  # one per participant response


@dataclass(frozen=True)
class GenerationDataset:
    trials: tuple[GenerationTrial, ...]


def load_classification_csv(path, resolve: Mapping[str, Callable[[str], int]]) -> ClassificationDataset:
    """CSV columns: trial_id, item, k, n; `resolve[trial_id]` maps a token
    string to its universe index."""
    rows: dict[str, list[tuple[int, int, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tid = row["trial_id"]
            rows.setdefault(tid, []).append(
                (resolve[tid](row["item"]), int(row["k"]), int(row["n"]))
            )
    trials = []
    for tid in sorted(rows):
        items, k, n = zip(*rows[tid])
        trials.append(ClassificationTrial(tid, items, k, n))
    return ClassificationDataset(trials=tuple(trials))


def load_generation_csv(path, resolve: Mapping[str, Callable[[str], int]]) -> GenerationDataset:
    """CSV columns: trial_id, token, participant_id."""
    rows: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tid = row["trial_id"]
            rows.setdefault(tid, []).append(resolve[tid](row["token"]))
    return GenerationDataset(
        trials=tuple(GenerationTrial(tid, tuple(rows[tid])) for tid in sorted(rows))
    )


# ---------------------------------------------------------------------------
# Objectives


def _binom_logpmf(k: int, n: int, p: float) -> float:
    if p <= 0.0:
        return 0.0 if k == 0 else -math.inf
    if p >= 1.0:
        return 0.0 if k == n else -math.inf
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + k * math.log(p)
        + (n - k) * math.log(1.0 - p)
    )


def nll_classification(
    data: ClassificationDataset,
    views: Mapping[str, TrialView],
    params: FitParams,
    per_trial: dict | None = None,
) -> float:
    params.validate()
    total = 0.0
    for trial in data.trials:
        post = posterior(views[trial.trial_id], params)
        t = 0.0
        for item, k, n in zip(trial.items, trial.k, trial.n):
            p = classify(item, post, params)
            t -= _binom_logpmf(k, n, p)
        if per_trial is not None:
            per_trial[trial.trial_id] = t
        total += t
    return total


def nll_generation(
    data: GenerationDataset,
    views: Mapping[str, TrialView],
    params: FitParams,
    per_trial: dict | None = None,
) -> float:
    params.validate()
    total = 0.0
    for trial in data.trials:
        post = posterior(views[trial.trial_id], params)
        t = -sum(predictive_logprob(tok, post, params) for tok in trial.tokens)
        if per_trial is not None:
            per_trial[trial.trial_id] = t
        total += t
    return total


# ---------------------------------------------------------------------------
# Parameter vector layout


@dataclass(frozen=True)
class ParamSpace:
    """Free-parameter layout: [p_ri, p_ai, set(6), alpha, (beta), ln T_p,
    ln T_l].  Temperatures ride in log coordinates for conditioning; the
    SET simplex stays an explicit equality constraint."""

    with_beta: bool = True
    eps: float = 1e-6
    t_lo: float = 1e-3
    t_hi: float = 1e3

    @property
    def names(self) -> tuple[str, ...]:
        base = ["p_ri", "p_ai"] + [f"set_{i}" for i in range(6)] + ["alpha"]
        if self.with_beta:
            base.append("beta")
        return tuple(base + ["T_p", "T_l"])

    @property
    def dim(self) -> int:
        return len(self.names)

    def pack(self, p: FitParams) -> np.ndarray:
        vec = [p.p_ri, p.p_ai, *p.theta_set, p.alpha]
        if self.with_beta:
            vec.append(p.beta)
        vec += [math.log(p.T_p), math.log(p.T_l)]
        return np.array(vec, dtype=float)

    def unpack(self, x: np.ndarray, base: FitParams | None = None) -> FitParams:
        base = base or FitParams()
        p_ri, p_ai = float(x[0]), float(x[1])
        theta = tuple(float(v) for v in x[2:8])
        s = sum(theta)
        if s <= 0:
            raise ConstraintViolationError("theta_set sums to zero")
        theta = tuple(v / s for v in theta)  # tolerate optimizer drift
        alpha = float(x[8])
        j = 9
        beta = float(x[j]) if self.with_beta else base.beta
        j += 1 if self.with_beta else 0
        t_p = min(max(math.exp(float(x[j])), self.t_lo), self.t_hi)
        t_l = min(max(math.exp(float(x[j + 1])), self.t_lo), self.t_hi)
        return FitParams(
            p_ri=min(max(p_ri, 0.0), 1.0),
            p_ai=min(max(p_ai, 0.0), 1.0),
            theta_set=theta,
            alpha=min(max(alpha, 0.0), 1.0),
            beta=min(max(beta, 0.0), 1.0),
            T_p=t_p,
            T_l=t_l,
        )

    def bounds(self) -> list[tuple[float, float]]:
        b = [(self.eps, 1 - self.eps)] * 2 + [(self.eps, 1.0)] * 6 + [(self.eps, 1 - self.eps)]
        if self.with_beta:
            b.append((self.eps, 1 - self.eps))
        b += [(math.log(self.t_lo), math.log(self.t_hi))] * 2
        return b

    def constraints(self):
        return [{"type": "eq", "fun": lambda x: float(np.sum(x[2:8]) - 1.0)}]

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        x = np.empty(self.dim)
        x[0] = rng.uniform(0.05, 0.95)
        x[1] = rng.uniform(0.05, 0.95)
        x[2:8] = rng.dirichlet(np.ones(6))
        x[8] = rng.uniform(0.5, 0.99)
        j = 9
        if self.with_beta:
            x[j] = rng.uniform(0.1, 0.9)
            j += 1
        x[j] = rng.uniform(math.log(0.3), math.log(3.0))
        x[j + 1] = rng.uniform(math.log(0.3), math.log(3.0))
        return x


def central_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    rel_h: float = 1e-5,
    bounds: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Central finite differences with relative step h; steps that would
    leave the feasible box fall back to one-sided differences."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = rel_h * max(abs(x[i]), 1.0)
        lo, hi = (-np.inf, np.inf) if bounds is None else bounds[i]
        up = x[i] + h <= hi
        down = x[i] - h >= lo
        xp, xm = x.copy(), x.copy()
        if up and down:
            xp[i] += h
            xm[i] -= h
            g[i] = (f(xp) - f(xm)) / (2 * h)
        elif up:
            xp[i] += h
            g[i] = (f(xp) - f(x)) / h
        else:
            xm[i] -= h
            g[i] = (f(x) - f(xm)) / h
    return g


# ---------------------------------------------------------------------------
# Fitting


@dataclass
class StartTrace:
    x0: list[float]
    nll: float
    converged: bool
    n_iter: int
    trace: list[float] = field(default_factory=list)
    message: str = ""


@dataclass
class FitResult:
    params: FitParams
    nll: float
    per_trial_nll: dict[str, float]
    starts: list[StartTrace]
    best_start: int
    names: tuple[str, ...]

    def save(self, path) -> None:
        blob = {
            "params": {
                "p_ri": self.params.p_ri,
                "p_ai": self.params.p_ai,
                "theta_set": list(self.params.theta_set),
                "alpha": self.params.alpha,
                "beta": self.params.beta,
                "T_p": self.params.T_p,
                "T_l": self.params.T_l,
            },
            "nll": self.nll,
            "per_trial_nll": self.per_trial_nll,
            "starts": [
                {
                    "x0": s.x0,
                    "nll": s.nll,
                    "converged": s.converged,
                    "n_iter": s.n_iter,
                    "message": s.message,
                }
                for s in self.starts
            ],
            "convergence": any(s.converged for s in self.starts),
            "best_start": self.best_start,
        }
        with open(path, "w") as fh:
            json.dump(blob, fh, indent=1, sort_keys=True)


def _objective_fn(
    objective: str,
    data,
    views: Mapping[str, TrialView],
    space: ParamSpace,
    base: FitParams,
    dirichlet_reg: float = 0.0,
):
    def f(x: np.ndarray) -> float:
        try:
            params = space.unpack(x, base)
            params.validate()
        except (InferenceError, ConstraintViolationError):
            return 1e12
        try:
            if objective == "classification":
                val = nll_classification(data, views, params)
            else:
                val = nll_generation(data, views, params)
        except NoViableHypothesisError:
            return 1e12
        if dirichlet_reg > 0.0:
            val -= (dirichlet_reg - 1.0) * float(
                np.sum(np.log(np.maximum(params.theta_set, 1e-12)))
            )
        if not np.isfinite(val):
            return 1e12
        return float(val)

    return f


def fit(
    data,
    views: Mapping[str, TrialView],
    objective: str = "classification",
    init: FitParams | None = None,
    n_starts: int = 10,
    seed: int = 0,
    max_iter: int = 200,
    method: str = "constrained",
    dirichlet_reg: float = 0.0,
) -> FitResult:
    """Multi-start constrained MLE.  `method="reparam"` optimizes in
    softmax/logit/log coordinates with BFGS instead of SLSQP."""
    if objective not in ("classification", "generation"):
        raise ConstraintViolationError(f"unknown objective {objective!r}")
    space = ParamSpace(with_beta=objective == "classification")
    base = init or FitParams()
    f = _objective_fn(objective, data, views, space, base, dirichlet_reg)
    rng = np.random.default_rng(seed)
    x0s = [space.pack(base)] + [space.random_start(rng) for _ in range(n_starts - 1)]
    starts: list[StartTrace] = []
    best: tuple[float, np.ndarray] | None = None
    for x0 in x0s:
        if method == "constrained":
            trace: list[float] = []

            def run(xs):
                return sopt.minimize(
                    f,
                    xs,
                    method="SLSQP",
                    jac=lambda x: central_diff_grad(f, x, bounds=space.bounds()),
                    bounds=space.bounds(),
                    constraints=space.constraints(),
                    callback=lambda xk: trace.append(f(xk)),
                    options={"maxiter": max_iter, "ftol": 1e-10},
                )

            res = run(x0)
            nit = int(res.nit)
            ok = bool(res.success)
            msg = str(res.message)
            if not res.success:
                # SLSQP can exit with spurious linesearch/infeasibility
                # codes at degenerate corners; restart from the incumbent
                # and call it converged if feasible and stationary.
                res2 = run(np.clip(res.x, [b[0] for b in space.bounds()], [b[1] for b in space.bounds()]))
                nit += int(res2.nit)
                improved = res.fun - res2.fun
                if res2.fun <= res.fun or res2.success:
                    res = res2
                cv = abs(float(np.sum(res.x[2:8]) - 1.0))
                stalled = improved <= 1e-6 * (1.0 + abs(res.fun))
                ok = bool(res.success) or (cv < 1e-6 and stalled)
                msg = str(res.message) if res.success else (
                    "stationary after restart" if ok else str(res.message)
                )
            xf, fval = res.x, float(res.fun)
        else:
            xf, fval, ok, nit, msg, trace = _fit_reparam(f, x0, space, max_iter)
        starts.append(
            StartTrace(
                x0=[float(v) for v in x0],
                nll=fval,
                converged=ok,
                n_iter=nit,
                trace=trace,
                message=msg,
            )
        )
        if best is None or fval < best[0]:
            best = (fval, xf)
    if best is None or not any(s.converged for s in starts):
        if best is None:
            raise NonConvergenceError("no start produced a finite objective")
    params = space.unpack(best[1], base)
    per_trial: dict[str, float] = {}
    if objective == "classification":
        total = nll_classification(data, views, params, per_trial)
    else:
        total = nll_generation(data, views, params, per_trial)
    return FitResult(
        params=params,
        nll=float(total),
        per_trial_nll=per_trial,
        starts=starts,
        best_start=int(np.argmin([s.nll for s in starts])),
        names=space.names,
    )


def _fit_reparam(f, x0: np.ndarray, space: ParamSpace, max_iter: int):
    """Unconstrained optimization in softmax (SET), logit (probabilities)
    and log (temperatures) coordinates."""
    nb = 1 if space.with_beta else 0

    def to_free(x: np.ndarray) -> np.ndarray:
        z = []
        z += [_logit(x[0]), _logit(x[1])]
        z += list(np.log(np.maximum(x[2:8], 1e-12)))
        z += [_logit(x[8])]
        if nb:
            z += [_logit(x[9])]
        z += [x[-2], x[-1]]  # already log-temperatures
        return np.array(z)

    def to_x(z: np.ndarray) -> np.ndarray:
        x = np.empty(space.dim)
        x[0], x[1] = _sigmoid(z[0]), _sigmoid(z[1])
        e = np.exp(z[2:8] - np.max(z[2:8]))
        x[2:8] = e / e.sum()
        x[8] = _sigmoid(z[8])
        j = 9
        if nb:
            x[9] = _sigmoid(z[9])
            j += 1
        x[j] = min(max(z[-2], math.log(space.t_lo)), math.log(space.t_hi))
        x[j + 1] = min(max(z[-1], math.log(space.t_lo)), math.log(space.t_hi))
        return x

    trace: list[float] = []
    res = sopt.minimize(
        lambda z: f(to_x(z)),
        to_free(x0),
        method="BFGS",
        callback=lambda zk: trace.append(f(to_x(zk))),
        options={"maxiter": max_iter},
    )
    return to_x(res.x), float(res.fun), bool(res.success), int(res.nit), str(res.message), trace


def _logit(p: float) -> float:
    p = min(max(p, 1e-9), 1 - 1e-9)
    return math.log(p / (1 - p))


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


# ---------------------------------------------------------------------------
# Synthetic data (recovery oracles)


def synthesize_classification(
    views: Mapping[str, TrialView],
    items: Mapping[str, Sequence[int]],
    params: FitParams,
    n_subjects: int,
    rng: np.random.Generator,
) -> ClassificationDataset:
    """Virtual yes/no counts drawn from the model at known parameters."""
    trials = []
    for tid in sorted(views):
        post = posterior(views[tid], params)
        its = list(items[tid])
        ps = [classify(y, post, params) for y in its]
        ks = [int(rng.binomial(n_subjects, p)) for p in ps]
        trials.append(
            ClassificationTrial(tid, tuple(its), tuple(ks), tuple([n_subjects] * len(its)))
        )
    return ClassificationDataset(trials=tuple(trials))


def synthesize_generation(
    views: Mapping[str, TrialView],
    params: FitParams,
    n_per_trial: int,
    rng: np.random.Generator,
) -> GenerationDataset:
    from .inference import sample_predictive

    trials = []
    for tid in sorted(views):
        post = posterior(views[tid], params)
        toks = tuple(sample_predictive(post, params, rng) for _ in range(n_per_trial))
        trials.append(GenerationTrial(tid, toks))
    return GenerationDataset(trials=tuple(trials))
