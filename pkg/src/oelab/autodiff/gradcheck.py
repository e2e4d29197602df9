"""Finite-difference gradient verification.

`finite_difference_check` compares tape gradients against central
differences, coordinate by coordinate, in float64. `GRADCHECK_CASES` maps
every registered op name to a list of case builders; a meta test asserts
the two key sets coincide so no op can ship unchecked.
"""

from __future__ import annotations

import warnings

import numpy as np

from oelab.autodiff.core import DiffArray, Tape, constant, parameter
from oelab.autodiff import ops
from oelab.autodiff.ops import OP_REGISTRY


def finite_difference_check(
    f, inputs, eps: float = 1e-5, sample: int | None = None, sample_seed: int = 0
) -> float:
    """Max relative error between tape gradients of f and central differences.

    f maps the list of DiffArrays to a scalar DiffArray. Inputs should be
    float64 parameters; each coordinate of each grad-requiring input is
    perturbed by +-eps with the tape inactive. Relative error uses
    |a - n| / max(1, |a|, |n|). A non-finite forward value returns inf.

    With ``sample`` set, at most that many coordinates per input are
    checked, drawn without replacement by a generator seeded from
    ``sample_seed`` and the input's position. Whole-model checks would
    otherwise need two forward passes per parameter coordinate.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    if sample is not None and sample < 1:
        raise ValueError(f"sample must be >= 1, got {sample}")
    for x in inputs:
        if not isinstance(x, DiffArray):
            raise TypeError("inputs must be DiffArrays")

    with Tape() as tape:
        loss = f(inputs)
        if loss.size != 1:
            raise ValueError(f"f must return a scalar, got shape {loss.shape}")
        base = float(loss.data.reshape(()))
        if not np.isfinite(base):
            warnings.warn("finite_difference_check: non-finite forward value")
            return float("inf")
        tape.backward(loss)

    worst = 0.0
    for pos, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        if sample is None or flat.size <= sample:
            coords = range(flat.size)
        else:
            picker = np.random.default_rng((sample_seed, pos))
            coords = picker.choice(flat.size, size=sample, replace=False)
        for j in coords:
            keep = flat[j]
            flat[j] = keep + eps
            up = float(f(inputs).data.reshape(()))
            flat[j] = keep - eps
            dn = float(f(inputs).data.reshape(()))
            flat[j] = keep
            if not (np.isfinite(up) and np.isfinite(dn)):
                warnings.warn("finite_difference_check: non-finite perturbed value")
                return float("inf")
            numeric = (up - dn) / (2.0 * eps)
            a = float(analytic.reshape(-1)[j])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# case registry

GRADCHECK_CASES: dict[str, object] = {}


def gradcheck_case(name: str):
    def deco(fn):
        GRADCHECK_CASES[name] = fn
        return fn

    return deco


def _params(rng: np.random.Generator, *shapes):
    return [parameter(rng.standard_normal(s), dtype=np.float64) for s in shapes]


def _project(out: DiffArray) -> DiffArray:
    """Scalarize with a projection that weights every output coordinate
    differently. Seeded from the shape only, so repeated calls of the same
    case see the same weights (finite differencing needs a deterministic f).
    """
    rng = np.random.default_rng(sum((i + 1) * n for i, n in enumerate(out.shape)) + 7)
    c = constant(rng.standard_normal(out.shape), dtype=np.float64)
    return ops.reduce_sum(ops.mul(out, c))


@gradcheck_case("add")
def _cases_add(rng):
    cases = []
    for sa, sb in [((3, 4), (3, 4)), ((2, 5), (5,)), ((4, 1, 3), (2, 3))]:
        a, b = _params(rng, sa, sb)
        cases.append((lambda xs: _project(ops.add(xs[0], xs[1])), [a, b]))
    return cases


@gradcheck_case("mul")
def _cases_mul(rng):
    cases = []
    for sa, sb in [((3, 4), (3, 4)), ((2, 5), (5,)), ((4, 1, 3), (2, 3))]:
        a, b = _params(rng, sa, sb)
        cases.append((lambda xs: _project(ops.mul(xs[0], xs[1])), [a, b]))
    return cases


@gradcheck_case("neg")
def _cases_neg(rng):
    return [
        (lambda xs: _project(ops.neg(xs[0])), _params(rng, s))
        for s in [(3,), (2, 4), (2, 3, 2)]
    ]


@gradcheck_case("scale")
def _cases_scale(rng):
    return [
        (lambda xs, c=c: _project(ops.scale(xs[0], c)), _params(rng, s))
        for s, c in [((3,), 2.5), ((2, 4), -0.3), ((5, 2), 1e-2)]
    ]


@gradcheck_case("matmul")
def _cases_matmul(rng):
    cases = []
    for sa, sb in [((3, 4), (4, 2)), ((1, 5), (5, 1)), ((2, 3, 4), (2, 4, 2))]:
        a, b = _params(rng, sa, sb)
        cases.append((lambda xs: _project(ops.matmul(xs[0], xs[1])), [a, b]))
    return cases


@gradcheck_case("affine")
def _cases_affine(rng):
    cases = []
    for n, k, m in [(3, 4, 2), (1, 6, 5), (5, 2, 3)]:
        x, w, b = _params(rng, (n, k), (k, m), (m,))
        cases.append(
            (lambda xs: _project(ops.affine(xs[0], xs[1], xs[2])), [x, w, b])
        )
    return cases


def _away_from_zero(rng, shape, margin=0.1):
    """Samples with |x| >= margin, keeping relu/abs kinks out of fd reach."""
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, margin * np.sign(x) + (x == 0) * margin, x)
    return parameter(x, dtype=np.float64)


@gradcheck_case("relu")
def _cases_relu(rng):
    return [
        (lambda xs: _project(ops.relu(xs[0])), [_away_from_zero(rng, s)])
        for s in [(7,), (3, 4), (2, 2, 3)]
    ]


@gradcheck_case("gelu")
def _cases_gelu(rng):
    return [
        (lambda xs: _project(ops.gelu(xs[0])), _params(rng, s))
        for s in [(7,), (3, 4), (2, 2, 3)]
    ]


@gradcheck_case("layer_norm")
def _cases_layer_norm(rng):
    cases = []
    for shape in [(3, 4), (2, 3, 5), (1, 8)]:
        d = shape[-1]
        x, g, b = _params(rng, shape, (d,), (d,))
        cases.append(
            (lambda xs: _project(ops.layer_norm(xs[0], xs[1], xs[2])), [x, g, b])
        )
    return cases


@gradcheck_case("softmax")
def _cases_softmax(rng):
    cases = []
    for shape, axis in [((3, 4), 1), ((2, 3, 5), -1), ((4, 3), 0)]:
        cases.append(
            (
                lambda xs, ax=axis: _project(ops.softmax(xs[0], axis=ax)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("logsumexp")
def _cases_logsumexp(rng):
    cases = []
    for shape, axis in [((3, 4), 1), ((2, 3, 5), -1), ((4, 3), 0)]:
        cases.append(
            (
                lambda xs, ax=axis: _project(ops.logsumexp(xs[0], axis=ax)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("reduce_sum")
def _cases_reduce_sum(rng):
    cases = []
    for shape, axis in [((3, 4), None), ((2, 3, 5), 1), ((6,), 0)]:
        cases.append(
            (
                lambda xs, ax=axis: _project(ops.reduce_sum(xs[0], axis=ax)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("reduce_mean")
def _cases_reduce_mean(rng):
    cases = []
    for shape, axis in [((3, 4), None), ((2, 3, 5), 1), ((6,), 0)]:
        cases.append(
            (
                lambda xs, ax=axis: _project(ops.reduce_mean(xs[0], axis=ax)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("reshape")
def _cases_reshape(rng):
    cases = []
    for shape, new in [((3, 4), (12,)), ((2, 3, 2), (6, 2)), ((6,), (2, 3))]:
        cases.append(
            (
                lambda xs, s=new: _project(ops.reshape(xs[0], s)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("transpose")
def _cases_transpose(rng):
    cases = []
    for shape, axes in [((3, 4), (1, 0)), ((2, 3, 4), (2, 0, 1)), ((2, 2, 3), (0, 2, 1))]:
        cases.append(
            (
                lambda xs, ax=axes: _project(ops.transpose(xs[0], ax)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("concat")
def _cases_concat(rng):
    cases = []
    for shapes, axis in [
        ([(2, 3), (4, 3)], 0),
        ([(3, 2), (3, 5), (3, 1)], 1),
        ([(2, 1, 4), (2, 2, 4)], 1),
    ]:
        xs = _params(rng, *shapes)
        cases.append((lambda inp, ax=axis: _project(ops.concat(inp, axis=ax)), xs))
    return cases


@gradcheck_case("gather_rows")
def _cases_gather_rows(rng):
    cases = []
    for shape, idx in [
        ((5, 3), [0, 2, 2, 4]),
        ((4, 2, 2), [3, 3, 0]),
        ((6,), [1, 5, 1, 0, 1]),
    ]:
        cases.append(
            (
                lambda xs, i=np.asarray(idx): _project(ops.gather_rows(xs[0], i)),
                _params(rng, shape),
            )
        )
    return cases


@gradcheck_case("segment_mean")
def _cases_segment_mean(rng):
    cases = []
    for n, d, seg, s in [
        (5, 3, [0, 0, 1, 2, 2], 3),
        (4, 2, [1, 1, 1, 1], 2),
        (6, 4, [0, 2, 0, 2, 4, 4], 5),  # segments 1 and 3 stay empty
    ]:
        cases.append(
            (
                lambda xs, ids=np.asarray(seg), ns=s: _project(
                    ops.segment_mean(xs[0], ids, ns)
                ),
                _params(rng, (n, d)),
            )
        )
    return cases


@gradcheck_case("l2_normalize_rows")
def _cases_l2_normalize_rows(rng):
    cases = []
    for shape in [(3, 4), (5, 2), (1, 6)]:
        x = parameter(rng.standard_normal(shape) + 1.0, dtype=np.float64)
        cases.append((lambda xs: _project(ops.l2_normalize_rows(xs[0])), [x]))
    return cases


@gradcheck_case("scaled_dot_attention")
def _cases_scaled_dot_attention(rng):
    cases = []
    for n, d, with_bias in [(3, 4, False), (5, 2, True), (2, 6, False)]:
        q, k, v = _params(rng, (n, d), (n, d), (n, d))
        bias = constant(rng.standard_normal((n, n)), dtype=np.float64) if with_bias else None
        cases.append(
            (
                lambda xs, b=bias: _project(
                    ops.scaled_dot_attention(xs[0], xs[1], xs[2], attn_bias=b)
                ),
                [q, k, v],
            )
        )
    return cases


def run_all_gradchecks(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Worst relative error per op over its registered cases."""
    results = {}
    for name in sorted(GRADCHECK_CASES):
        rng = np.random.default_rng(seed)
        worst = 0.0
        for f, inputs in GRADCHECK_CASES[name](rng):
            worst = max(worst, finite_difference_check(f, inputs, eps=eps))
        results[name] = worst
    return results
