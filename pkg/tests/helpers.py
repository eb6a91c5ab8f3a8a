"""Shared test utilities: finite-difference gradient checking and
independent numpy reference implementations used as oracles."""

import numpy as np

from awg import ndcore as nd


def finite_diff_grad(fn, tensor: nd.Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar fn() w.r.t. one tensor's entries.

    fn must re-run the forward pass reading the tensor's current data.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        with nd.no_grad():
            f_plus = fn().item()
        flat[i] = orig - eps
        with nd.no_grad():
            f_minus = fn().item()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(tensor.data.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative disagreement; 0 when both are (near) zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, tensors, eps: float = 1e-5, tol: float = 1e-4):
    """Assert analytic grads of scalar fn() match finite differences.

    Runs one taped forward/backward, then central differences per tensor.
    Returns the worst relative error observed.
    """
    nd.reset_tape()
    for t in tensors:
        t.zero_grad()
    loss = fn()
    nd.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = finite_diff_grad(fn, t, eps=eps)
        err = rel_error(analytic, numeric)
        assert err < tol, (
            f"gradient mismatch (rel err {err:.3e} >= {tol}) for tensor of shape {t.shape}\n"
            f"analytic: {analytic.ravel()[:8]}\nnumeric:  {numeric.ravel()[:8]}")
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Independent reference implementations (double-loop, no tape)
# ---------------------------------------------------------------------------

def ref_conv1d(signal: np.ndarray, filt: np.ndarray, stride: int, boundary: str = "periodic") -> np.ndarray:
    L, F = len(signal), len(filt)
    out_len = -(-L // stride)
    out = np.zeros(out_len)
    for n in range(out_len):
        for k in range(F):
            idx = n * stride + k
            if boundary == "periodic":
                out[n] += signal[idx % L] * filt[k]
            elif idx < L:
                out[n] += signal[idx] * filt[k]
    return out


def ref_conv1d_adjoint(coeffs: np.ndarray, filt: np.ndarray, stride: int, out_len: int,
                       boundary: str = "periodic") -> np.ndarray:
    out = np.zeros(out_len)
    for n in range(len(coeffs)):
        for k in range(len(filt)):
            idx = n * stride + k
            if boundary == "periodic":
                out[idx % out_len] += coeffs[n] * filt[k]
            elif idx < out_len:
                out[idx] += coeffs[n] * filt[k]
    return out


HAAR_LO = np.array([1.0, 1.0]) / np.sqrt(2.0)
HAAR_HI = np.array([1.0, -1.0]) / np.sqrt(2.0)


def ref_dwt(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, levels: int):
    """Reference periodic cascade: returns (details list, approx)."""
    a = x.astype(np.float64)
    details = []
    for _ in range(levels):
        details.append(ref_conv1d(a, hi, 2, "periodic"))
        a = ref_conv1d(a, lo, 2, "periodic")
    return details, a


def ref_idwt(details, approx, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    a = approx.astype(np.float64)
    for d in reversed(details):
        out_len = 2 * len(a)
        a = (ref_conv1d_adjoint(a, lo, 2, out_len, "periodic")
             + ref_conv1d_adjoint(d, hi, 2, out_len, "periodic"))
    return a
