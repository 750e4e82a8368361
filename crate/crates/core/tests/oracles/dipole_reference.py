"""Standalone reference evaluation of the dipole profile used by `sss::dipole_profile`.

Run with `python3 dipole_reference.py`; the printed values are frozen into the
Rust tests. Implemented directly from the closed form with mpmath at 50 digits.
"""
import mpmath as mp

mp.mp.dps = 50


def fdr(eta):
    eta = mp.mpf(eta)
    return -mp.mpf("1.440") / eta**2 + mp.mpf("0.710") / eta + mp.mpf("0.668") + mp.mpf("0.0636") * eta


def profile(ss, sa, r, eta, classical=False):
    ss, sa, r = mp.mpf(ss), mp.mpf(sa), mp.mpf(r)
    st = ss + sa
    alb = ss / st
    f = fdr(eta)
    a = (1 + f) / (1 - f)
    zr = 1 / st
    zv = zr * (1 + 4 * a / 3)
    dr = mp.sqrt(r * r + zr * zr)
    dv = mp.sqrt(r * r + zv * zv)
    real = zr * (st * dr + 1) * mp.e ** (-st * dr) / dr**3
    lead = (st * dv + 1) if classical else (st * dr + 1)
    virt = zr * zv * lead * mp.e ** (-st * dv) / dv**3
    return alb / (4 * mp.pi) * (real + virt)


if __name__ == "__main__":
    print("golden", mp.nstr(profile("1.0", "0.1", "1.0", "1.3"), 20))
    print("golden_classical", mp.nstr(profile("1.0", "0.1", "1.0", "1.3", True), 20))
    print("golden_corner_lo", mp.nstr(profile("0.05", "0.05", "0.1", "1.3"), 20))
    print("golden_corner_hi", mp.nstr(profile("2.05", "2.05", "3.1", "1.3"), 20))
    # positivity and monotone decay in r over a 50^3 grid (float64)
    import numpy as np
    g = np.linspace(0.05, 2.05, 50)
    rs = np.linspace(0.1, 3.1, 50)
    ok = True
    for ss in g:
        for sa in g:
            vals = [float(profile(ss, sa, r, "1.3")) for r in rs[::7]]
            if not all(v > 0 for v in vals) or not all(x > y for x, y in zip(vals, vals[1:])):
                ok = False
    print("grid_ok", ok)


def write_fixture(path="dipole_fixture.csv", n=1000, seed=20240611):
    """Random in-range (sigma_s, sigma_a, r) triples with their reference values."""
    import numpy as np
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write("sigma_s,sigma_a,r,f_sss\n")
        for _ in range(n):
            ss = float(rng.uniform(0.05, 2.05))
            sa = float(rng.uniform(0.05, 2.05))
            r = float(rng.uniform(0.1, 3.1))
            v = profile(repr(ss), repr(sa), repr(r), "1.3")
            fh.write(f"{ss!r},{sa!r},{r!r},{mp.nstr(v, 20)}\n")


if __name__ == "__main__":
    write_fixture()
