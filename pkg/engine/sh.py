"""
Real spherical harmonics up to degree 3, 3DGS sign conventions.

Coefficient k of a channel multiplies basis column k: k=0 is the DC term,
k=1..3 degree 1, k=4..8 degree 2, k=9..15 degree 3.
"""

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

DEGREE3_COLUMNS = slice(9, 16)


def coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """(M, 16) basis values for unit directions; columns above `degree` are zero"""
    m = dirs.shape[0]
    basis = np.zeros((m, 16), dtype=np.float64)
    basis[:, 0] = SH_C0
    if degree < 1:
        return basis
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis[:, 1] = -SH_C1 * y
    basis[:, 2] = SH_C1 * z
    basis[:, 3] = -SH_C1 * x
    if degree < 2:
        return basis
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    basis[:, 4] = SH_C2[0] * xy
    basis[:, 5] = SH_C2[1] * yz
    basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    basis[:, 7] = SH_C2[3] * xz
    basis[:, 8] = SH_C2[4] * (xx - yy)
    if degree < 3:
        return basis
    basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    basis[:, 10] = SH_C3[1] * xy * z
    basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    basis[:, 14] = SH_C3[5] * z * (xx - yy)
    basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return basis


def stack_coefficients(sh_dc: np.ndarray, sh_rest: np.ndarray) -> np.ndarray:
    """(N, 3, 16) per-channel coefficients from the dc / channel-major rest arrays"""
    n = sh_dc.shape[0]
    coeffs = np.empty((n, 3, 16), dtype=np.float64)
    coeffs[:, :, 0] = sh_dc
    coeffs[:, :, 1:] = sh_rest.reshape(n, 3, 15)
    return coeffs


def evaluate(coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """(N, 3) colors; the sum runs k = 0..15 in order so each row is reproducible"""
    out = coeffs[:, :, 0] * basis[:, None, 0]
    for k in range(1, 16):
        out = out + coeffs[:, :, k] * basis[:, None, k]
    return out
