"""l-inf adversarial attacks: FGSM, PGD, score-based random search, and the
joint targeted attack against a primal/auxiliary pair.

Every iterate is projected onto the eps-ball around the clean input first and
the unit box second, so emitted points always satisfy both constraints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .models import Model, forward, input_gradient
from .seeding import stream


@dataclass
class AttackConfig:
    epsilon: float = 0.1
    step_size: float = 0.025
    iterations: int = 10
    random_init: bool = True
    norm: str = "linf"
    targeted: Optional[int] = None
    lam: float = 1.0
    query_budget: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.norm != "linf":
            raise ParameterError("only the linf norm is supported")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ParameterError("epsilon must be finite and >= 0")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.iterations > 0 and not self.step_size > 0:
            raise ParameterError("step_size must be positive when iterations > 0")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ParameterError("lam must be finite and >= 0")
        if self.query_budget < 1:
            raise ParameterError("query_budget must be >= 1")


@dataclass
class AdversarialPair:
    x_clean: np.ndarray
    x_adv: np.ndarray
    y_true: int
    succeeded: bool

    def to_dict(self, id: str) -> dict:
        return {
            "id": id,
            "y_true": self.y_true,
            "x_clean": self.x_clean.tolist(),
            "x_adv": self.x_adv.tolist(),
            "succeeded": self.succeeded,
        }


def project(X: np.ndarray, X0: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp into the eps-ball around ``X0``, then into [0, 1]."""
    return np.clip(np.clip(X, X0 - epsilon, X0 + epsilon), 0.0, 1.0)


def _check_input(m: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.d:
        raise ParameterError(f"input dimension {x.shape[-1]} != model dimension {m.d}")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ParameterError("clean input must lie in [0, 1]^d")
    return x


def init_noise(cfg: AttackConfig, d: int, seed: int | None = None) -> np.ndarray:
    """Uniform [-eps, eps] start offset drawn from the ``attack/init`` stream."""
    rng = stream(cfg.seed if seed is None else seed, "attack/init")
    return rng.uniform(-cfg.epsilon, cfg.epsilon, d)


def _signed_descent(
    direction: Callable[[np.ndarray], np.ndarray],
    X0: np.ndarray,
    cfg: AttackConfig,
    noise: np.ndarray | None,
) -> np.ndarray:
    X = X0.copy() if noise is None else project(X0 + noise, X0, cfg.epsilon)
    for _ in range(cfg.iterations):
        X = project(X + cfg.step_size * np.sign(direction(X)), X0, cfg.epsilon)
    return X


def _batch_noise(cfg, X0, rng, seeds):
    if not cfg.random_init:
        return None
    if seeds is not None:
        return np.stack([init_noise(cfg, X0.shape[1], s) for s in seeds])
    if rng is None:
        rng = stream(cfg.seed, "attack/init")
    return rng.uniform(-cfg.epsilon, cfg.epsilon, X0.shape)


def pgd_batch(
    m: Model,
    X,
    y,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
    seeds: Sequence[int] | None = None,
    targets=None,
) -> np.ndarray:
    """PGD over a batch; returns the adversarial inputs only.

    Start offsets come from ``seeds`` (one per row, matching the single-input
    ``pgd`` with ``cfg.seed = seeds[i]``), else from ``rng``, else from
    ``cfg.seed``.  ``targets`` (or ``cfg.targeted``) switches to a targeted
    attack that descends CE toward the target label.
    """
    X0 = _check_input(m, np.atleast_2d(X))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X0),))
    if targets is None and cfg.targeted is not None:
        targets = cfg.targeted
    if targets is not None:
        targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (len(X0),))
        if np.any(targets == y):
            raise ParameterError("target label must differ from y_true")

        def direction(X):
            return input_gradient(m, X, targets, "minimize")
    else:

        def direction(X):
            return input_gradient(m, X, y, "maximize")

    return _signed_descent(direction, X0, cfg, _batch_noise(cfg, X0, rng, seeds))


def _misclassified(m: Model, x_adv: np.ndarray, y_true: int) -> bool:
    return int(np.argmax(forward(m, x_adv))) != y_true


def fgsm(m: Model, x, y_true: int, epsilon: float) -> AdversarialPair:
    """Single signed-gradient step of size ``epsilon`` (sign(0) = 0)."""
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    x = _check_input(m, x)
    x_adv = np.clip(x + epsilon * np.sign(input_gradient(m, x, y_true)), 0.0, 1.0)
    return AdversarialPair(x, x_adv, int(y_true), _misclassified(m, x_adv, y_true))


def pgd(m: Model, x, y_true: int, cfg: AttackConfig) -> AdversarialPair:
    x = _check_input(m, x)
    if x.ndim != 1:
        raise ParameterError("pgd takes a single input; use pgd_batch for batches")
    noise = init_noise(cfg, m.d)[None, :] if cfg.random_init else None
    if cfg.targeted is not None:
        if cfg.targeted == y_true:
            raise ParameterError("target label must differ from y_true")

        def direction(X):
            return input_gradient(m, X, cfg.targeted, "minimize")
    else:

        def direction(X):
            return input_gradient(m, X, y_true, "maximize")

    x_adv = _signed_descent(direction, x[None, :], cfg, noise)[0]
    return AdversarialPair(x, x_adv, int(y_true), _misclassified(m, x_adv, y_true))


def _joint_direction(f: Model, g: Model, targets, lam: float):
    def direction(X):
        return input_gradient(f, X, targets, "minimize") + lam * input_gradient(
            g, X, targets, "minimize"
        )

    return direction


def _check_pair(f: Model, g: Model):
    if f.d != g.d or f.k != g.k:
        raise ParameterError(
            f"primal (d={f.d}, k={f.k}) and auxiliary (d={g.d}, k={g.k}) disagree"
        )


def adaptive_joint_attack(
    f: Model, g: Model, x, y_true: int, t: int, cfg: AttackConfig
) -> AdversarialPair:
    """Targeted PGD on ``CE(f(x+r), t) + lam * CE(g(x+r), t)``.

    Succeeds when both models predict ``t``.
    """
    _check_pair(f, g)
    if t == y_true:
        raise ParameterError("target label must differ from y_true")
    if not 0 <= t < f.k:
        raise ParameterError(f"target {t} outside [0, {f.k})")
    x = _check_input(f, x)
    noise = init_noise(cfg, f.d)[None, :] if cfg.random_init else None
    x_adv = _signed_descent(_joint_direction(f, g, t, cfg.lam), x[None, :], cfg, noise)[0]
    both = int(np.argmax(forward(f, x_adv))) == t and int(np.argmax(forward(g, x_adv))) == t
    return AdversarialPair(x, x_adv, int(y_true), both)


def adaptive_batch(
    f: Model,
    g: Model,
    X,
    y,
    targets,
    cfg: AttackConfig,
    seeds: Sequence[int] | None = None,
) -> np.ndarray:
    _check_pair(f, g)
    X0 = _check_input(f, np.atleast_2d(X))
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X0),))
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (len(X0),))
    if np.any(targets == y):
        raise ParameterError("target label must differ from y_true")
    noise = _batch_noise(cfg, X0, None, seeds)
    return _signed_descent(_joint_direction(f, g, targets, cfg.lam), X0, cfg, noise)


def second_choice_targets(f: Model, X) -> np.ndarray:
    """Second-most-likely class of ``f`` per row (ties by lowest index)."""
    order = np.argsort(-forward(f, np.atleast_2d(X)), axis=-1, kind="stable")
    return order[:, 1]


def _margin(p: np.ndarray, y: int) -> float:
    others = np.delete(p, y)
    return float(p[y] - others.max())


def random_search_attack(
    m: Model,
    x,
    y_true: int,
    cfg: AttackConfig,
    history: list | None = None,
    p_init: float = 0.5,
) -> AdversarialPair:
    """Gradient-free attack driven only by ``forward`` scores.

    Proposals overwrite a random contiguous window of coordinates with
    ``x +/- eps`` (random signs); the window shrinks by half every eighth of
    the budget.  A proposal is kept only if it strictly lowers the margin
    ``f_y - max_{i != y} f_i``.  At most ``cfg.query_budget`` forward calls
    are issued; accepted margins are appended to ``history`` if given.
    """
    x = _check_input(m, x)
    d = m.d
    rng = stream(cfg.seed, "attack/random_search")
    p = forward(m, x)
    queries = 1
    cur, cur_margin = x.copy(), _margin(p, y_true)
    fooled = int(np.argmax(p)) != y_true
    if history is not None:
        history.append(cur_margin)
    halve_every = max(1, cfg.query_budget // 8)
    proposals = 0
    while not fooled and queries < cfg.query_budget and cfg.epsilon > 0:
        proposals += 1
        if proposals > 20 * cfg.query_budget:
            break
        width = max(1, int(round(d * p_init / 2 ** (queries // halve_every))))
        start = int(rng.integers(0, d - width + 1))
        signs = rng.choice((-1.0, 1.0), size=width)
        cand = cur.copy()
        cand[start : start + width] = x[start : start + width] + cfg.epsilon * signs
        cand = project(cand, x, cfg.epsilon)
        if np.array_equal(cand, cur):
            continue
        p = forward(m, cand)
        queries += 1
        margin = _margin(p, y_true)
        if margin < cur_margin:
            cur, cur_margin = cand, margin
            fooled = int(np.argmax(p)) != y_true
            if history is not None:
                history.append(cur_margin)
    return AdversarialPair(x, cur, int(y_true), fooled)


def attack_success_rate(m: Model, pairs: Sequence[AdversarialPair]) -> float:
    if not pairs:
        raise ParameterError("need at least one adversarial pair")
    X_adv = np.stack([pair.x_adv for pair in pairs])
    y = np.array([pair.y_true for pair in pairs])
    return float(np.mean(np.argmax(forward(m, X_adv), axis=-1) != y))


def write_adversarial_pairs(path, pairs: Sequence[AdversarialPair], ids: Sequence[str]) -> None:
    if len(pairs) != len(ids):
        raise ParameterError("one id per pair required")
    lines = [json.dumps(pair.to_dict(i)) for pair, i in zip(pairs, ids)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_adversarial_pairs(path) -> list[tuple[str, AdversarialPair]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        pair = AdversarialPair(
            np.array(obj["x_clean"], dtype=np.float64),
            np.array(obj["x_adv"], dtype=np.float64),
            int(obj["y_true"]),
            bool(obj["succeeded"]),
        )
        out.append((obj["id"], pair))
    return out
