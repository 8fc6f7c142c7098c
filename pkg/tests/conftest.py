import numpy as np
import pytest

from spxrefine.segmentation import SuperpixelSegmentation


def seg_from(labels) -> SuperpixelSegmentation:
    labels = np.asarray(labels, dtype=np.int32)
    return SuperpixelSegmentation(labels, int(labels.max()) + 1)


def quadrants(n: int = 8) -> SuperpixelSegmentation:
    """Four square superpixels: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    h = n // 2
    lab = np.zeros((n, n), np.int32)
    lab[:h, h:] = 1
    lab[h:, :h] = 2
    lab[h:, h:] = 3
    return seg_from(lab)


def random_partition(rng, h, w, n):
    """Voronoi-style partition into at most ``n`` compact superpixels, relabeled compactly."""
    from spxrefine.segmentation import relabel_first_appearance

    pts = np.stack([rng.uniform(0, h, n), rng.uniform(0, w, n)], axis=1)
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    lab, count = relabel_first_appearance(np.argmin(d, axis=2))
    return SuperpixelSegmentation(lab, count)


def textured_image(rng, h, w):
    base = rng.uniform(0, 1, size=3)
    img = base + 0.15 * rng.normal(size=(h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(6):
        cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(h / 10, h / 3)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = rng.uniform(0, 1, size=3) + 0.1 * rng.normal(size=3)
    img = img + 0.05 * rng.normal(size=img.shape)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion, echoed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE[number] = line
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
