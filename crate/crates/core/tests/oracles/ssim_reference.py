"""Reference SSIM values for the procedural fixture pairs used in the metrics tests.

The fixture images are generated from a xorshift32 stream so the Rust tests can
rebuild them bit-exactly. SSIM is computed with scikit-image on the Rec.601 luma
channel (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, data range 1).
"""
import numpy as np
from skimage.metrics import structural_similarity

W, H = 48, 40


def xorshift32(state):
    state ^= (state << 13) & 0xFFFFFFFF
    state ^= state >> 17
    state ^= (state << 5) & 0xFFFFFFFF
    return state & 0xFFFFFFFF


def fixture_pair(k):
    state = 0x9E3779B9 ^ (k + 1)
    a = np.zeros((H, W, 3), dtype=np.int64)
    b = np.zeros((H, W, 3), dtype=np.int64)
    amp = 6 * (k + 1)
    for y in range(H):
        for x in range(W):
            for c in range(3):
                state = xorshift32(state)
                base = (x * (3 + k) + y * (5 + 2 * k) + c * 60) % 256
                av = (base * 3 + (state % 64)) // 4
                state = xorshift32(state)
                noise = int(state % (2 * amp + 1)) - amp
                bv = min(255, max(0, av + noise))
                a[y, x, c] = av
                b[y, x, c] = bv
    return a, b


def luma(img):
    f = img.astype(np.float64) / 255.0
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


if __name__ == "__main__":
    for k in range(10):
        a, b = fixture_pair(k)
        s = structural_similarity(
            luma(a), luma(b), gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0, K1=0.01, K2=0.03,
        )
        print(f"{k} {s:.12f}")
