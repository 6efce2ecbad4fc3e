"""Independent port of the 88-line MATLAB topology optimization code.

Produces the optimality-criteria reference value for the 60x20 MBB beam
(volume fraction 0.5, penalty 3, sensitivity filter radius 2.4) that the
Rust baseline is compared against.  Run once; the printed values are
recorded in crates/core/tests/fixtures/top88_mbb_60x20.toml.

    python3 tools/top88_reference.py [nelx nely volfrac penal rmin ft]
"""

import sys

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve


def top88(nelx, nely, volfrac, penal, rmin, ft):
    E0, Emin, nu = 1.0, 1e-9, 0.3
    A11 = np.array([[12, 3, -6, -3], [3, 12, 3, 0], [-6, 3, 12, -3], [-3, 0, -3, 12]])
    A12 = np.array([[-6, -3, 0, 3], [-3, -6, -3, -6], [0, -3, -6, 3], [3, -6, 3, -6]])
    B11 = np.array([[-4, 3, -2, 9], [3, -4, -9, 4], [-2, -9, -4, -3], [9, 4, -3, -4]])
    B12 = np.array([[2, -3, 4, -9], [-3, 2, 9, -2], [4, 9, 2, 3], [-9, -2, 3, 2]])
    KE = 1 / (1 - nu**2) / 24 * (
        np.block([[A11, A12], [A12.T, A11]]) + nu * np.block([[B11, B12], [B12.T, B11]])
    )
    # MATLAB is 1-based and column-major; indices below are 0-based
    nodenrs = np.arange((1 + nelx) * (1 + nely)).reshape((1 + nely, 1 + nelx), order="F")
    edofVec = (2 * nodenrs[:-1, :-1] + 2).reshape(nelx * nely, order="F")
    offs = np.array([0, 1, 2 * nely + 2, 2 * nely + 3, 2 * nely, 2 * nely + 1, -2, -1])
    edofMat = edofVec[:, None] + offs[None, :]
    iK = np.kron(edofMat, np.ones((8, 1), dtype=int)).flatten()
    jK = np.kron(edofMat, np.ones((1, 8), dtype=int)).flatten()

    ndof = 2 * (nely + 1) * (nelx + 1)
    F = np.zeros(ndof)
    F[1] = -1.0
    fixeddofs = np.union1d(np.arange(0, 2 * (nely + 1), 2), [ndof - 1])
    freedofs = np.setdiff1d(np.arange(ndof), fixeddofs)

    # filter matrix
    rows, cols, vals = [], [], []
    r = int(np.ceil(rmin)) - 1
    for i1 in range(nelx):
        for j1 in range(nely):
            e1 = i1 * nely + j1
            for i2 in range(max(i1 - r, 0), min(i1 + r, nelx - 1) + 1):
                for j2 in range(max(j1 - r, 0), min(j1 + r, nely - 1) + 1):
                    e2 = i2 * nely + j2
                    w = max(0.0, rmin - np.hypot(i1 - i2, j1 - j2))
                    rows.append(e1)
                    cols.append(e2)
                    vals.append(w)
    H = coo_matrix((vals, (rows, cols)), shape=(nelx * nely, nelx * nely)).tocsr()
    Hs = np.asarray(H.sum(axis=1)).ravel()

    x = np.full(nelx * nely, volfrac)
    xPhys = x.copy()
    loop, change = 0, 1.0
    c = None
    while change > 0.01:
        loop += 1
        sK = (KE.flatten()[None, :] * (Emin + xPhys[:, None] ** penal * (E0 - Emin))).flatten()
        K = coo_matrix((sK, (iK, jK)), shape=(ndof, ndof)).tocsc()
        K = (K + K.T) / 2
        U = np.zeros(ndof)
        U[freedofs] = spsolve(K[freedofs][:, freedofs], F[freedofs])
        ue = U[edofMat]
        ce = np.einsum("ij,jk,ik->i", ue, KE, ue)
        c = np.sum((Emin + xPhys**penal * (E0 - Emin)) * ce)
        dc = -penal * (E0 - Emin) * xPhys ** (penal - 1) * ce
        dv = np.ones(nelx * nely)
        if ft == 1:
            dc = H @ (x * dc) / Hs / np.maximum(1e-3, x)
        else:
            dc = H @ (dc / Hs)
            dv = H @ (dv / Hs)
        l1, l2, move = 0.0, 1e9, 0.2
        while (l2 - l1) / (l1 + l2) > 1e-3:
            lmid = 0.5 * (l2 + l1)
            xnew = np.maximum(0, np.maximum(x - move, np.minimum(1, np.minimum(x + move, x * np.sqrt(-dc / dv / lmid)))))
            if ft == 1:
                xPhys = xnew
            else:
                xPhys = (H @ xnew) / Hs
            if xPhys.sum() > volfrac * nelx * nely:
                l1 = lmid
            else:
                l2 = lmid
        change = np.max(np.abs(xnew - x))
        x = xnew
    return c, loop, np.mean((xPhys > 0.05) & (xPhys < 0.95))


if __name__ == "__main__":
    args = sys.argv[1:]
    nelx, nely = (int(a) for a in args[:2]) if args else (60, 20)
    volfrac, penal, rmin = (float(a) for a in args[2:5]) if len(args) >= 5 else (0.5, 3.0, 2.4)
    ft = int(args[5]) if len(args) >= 6 else 1
    c, loop, grey = top88(nelx, nely, volfrac, penal, rmin, ft)
    print(f"compliance = {c:.10g}")
    print(f"iterations = {loop}")
    print(f"grey_fraction = {grey:.6g}")
